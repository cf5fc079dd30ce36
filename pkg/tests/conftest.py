"""Shared fixtures for the test suite.

Most tests build their own small inputs inline. What lives here is the
synthetic braking approach used by the pipeline-level tests, plus helpers
that wrap a generated scenario in the document shapes the pipeline reads.
"""
from __future__ import annotations

import pytest

from orthobrake import synthkit
from orthobrake.correspond import annotations_to_doc
from orthobrake.homog import HomographyRecord
from orthobrake.pipeline import geotransform_to_doc, record_to_doc


def make_site_doc(sc: synthkit.ApproachScenario, site_id: str = "site-a", **extra) -> dict:
    """Site document for a generated scenario, shaped like a stored site row."""
    doc = {
        "site_id": site_id,
        "geotransform": geotransform_to_doc(sc.geotransform),
        "annotations": annotations_to_doc(sc.annotations),
        "homographies": [record_to_doc(HomographyRecord(homography=sc.homography))],
    }
    doc.update(extra)
    return doc


def make_meta_doc(sc: synthkit.ApproachScenario) -> dict:
    m = sc.meta
    return {
        "video_id": m.video_id,
        "start_time": m.start_time,
        "fps": m.fps,
        "filename": m.filename,
    }


@pytest.fixture
def braking_profile() -> synthkit.ApproachProfile:
    """15 m/s approach braking at 3 m/s^2 from 40 m out; stops short of the bar."""
    return synthkit.ApproachProfile(v0=15.0, a_brake=3.0, brake_at_r=40.0)


@pytest.fixture
def clean_scenario(braking_profile) -> synthkit.ApproachScenario:
    """Noise-free 30 fps approach under a mildly perspective homography."""
    return synthkit.gen_approach(
        braking_profile, fps=30.0, noise_px=0.0, h=synthkit.gen_homography(3)
    )
