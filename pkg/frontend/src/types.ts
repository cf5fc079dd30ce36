// Document shapes exchanged with the service. The UI never recomputes any
// of these numbers; it renders what the server returned.

export interface Point {
  x: number;
  y: number;
}

export interface PairEntry {
  id: number;
  cam: [number, number];
  ortho: [number, number];
  label?: string;
}

export interface PairsDoc {
  schema_version: 1;
  site_id: string;
  camera_image_ref: string;
  ortho_ref: string;
  pairs: PairEntry[];
}

export type AnalysisSide = "left" | "right" | "both";

export interface AnnotationsDoc {
  stop_bar: [[number, number], [number, number]];
  median_line: [number, number][];
  analysis_side: AnalysisSide;
}

export interface EstimateResult {
  h: number[];
  inlier_mask: boolean[];
  inlier_count: number;
  score: number;
  iterations_run: number;
  mean_inlier_error: number;
  seed: number;
  warnings: string[];
  record_index: number;
}

export type Severity = "mild" | "moderate" | "severe";

export interface EventRow {
  site_id: string;
  video_id: string;
  track_id: number;
  t_start: number;
  t_end: number;
  duration: number;
  a_bar: number;
  a_robust: number;
  peak_decel: number;
  r_start: number;
  mean_easting: number;
  mean_northing: number;
  severity: Severity;
  t_start_iso: string;
  t_end_iso: string;
}

export interface TrajectoryRow {
  site_id: string;
  video_id: string;
  track_id: number;
  class: string;
  point_count: number;
  t_first: number;
  t_last: number;
  points_blob: { t: number[]; x: number[]; y: number[] };
}

export interface SiteDoc {
  site_id: string;
  utc_offset_hours?: number;
  [key: string]: unknown;
}
