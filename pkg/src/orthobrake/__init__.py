"""Traffic-camera rectification onto orthoimagery and braking-event analytics.

The package is organized around a ground-plane pipeline: correspondences
between a fixed camera view and a georeferenced orthoimage are fit with a
robust projective homography, vehicle detections are lifted into metric
world coordinates, and per-vehicle deceleration events are detected,
classified, stored, and summarized.
"""

__version__ = "0.1.0"
