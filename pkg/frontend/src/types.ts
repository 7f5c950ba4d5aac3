/** JSON shapes exchanged with the reconstruction service. */

export type Polarity = 1 | -1;

export interface SessionInfo {
  session_id: string;
  height: number;
  width: number;
  points_version: number;
  points: [number, number, number][];
  result_versions: number[];
  active_job: string | null;
  poll_interval_ms: number;
}

export interface JobProgress {
  iteration: number;
  iterations_total: number;
  /** Steps actually taken; less than the total when the plateau stop fired. */
  iterations_run?: number;
  breakdown: Record<string, number> | null;
}

export interface JobInfo {
  job_id: string;
  session_id: string;
  state: 'queued' | 'running' | 'done' | 'failed';
  progress: JobProgress;
  result_version: number | null;
  error: string | null;
}

export interface ReconstructOptions {
  members?: number;
  iterations?: number;
  strategy?: 'mean' | 'majority';
  poles?: [Polarity, Polarity];
  warm_start?: boolean;
  lam_pole?: number;
  base_seed?: number;
}

/** Decoded raster (from P5 bytes or the JSON representation). */
export interface Raster {
  width: number;
  height: number;
  /** Row-major values; confidence in [-1, 1], binarized in {-1, +1}. */
  values: Float64Array;
}
