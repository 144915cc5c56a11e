// Wire types for the gateway HTTP API.

export interface GeoTransformDoc {
  origin_x: number;
  origin_y: number;
  pixel_size: number;
}

export interface ProjectDoc {
  project_id: string;
  image_path: string;
  width: number;
  height: number;
  geotransform: GeoTransformDoc;
  cloud_path: string;
  status: string;
}

/** Pixel-edge box [x_min, y_min, x_max, y_max]; x = column, y = row. */
export type BoxArray = [number, number, number, number];

export interface DetectionsDoc {
  stored: number;
  total: number;
  detections: BoxArray[];
}

export interface SegmentDoc {
  trees: number;
  fallbacks: number;
}

export interface QueryResultDoc {
  columns: string[];
  rows: (number | string | boolean | null)[][];
}

export interface StepDoc {
  thought: string;
  action: string;
  action_input: Record<string, unknown>;
  observation: string;
}

export interface TraceDoc {
  instruction: string;
  steps: StepDoc[];
  final: string | null;
  artifacts: string[];
  status: string;
  error: string | null;
}

export interface SessionDoc {
  session_id: number;
  project_id: string;
}

export interface HealthDoc {
  status: string;
  offline: boolean;
}
