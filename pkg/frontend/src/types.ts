export interface TfPoint {
  x: number;
  rgb: [number, number, number];
  sigma: number;
}

export interface CameraSpec {
  eye: [number, number, number];
  target: [number, number, number];
  up: [number, number, number];
  fov_y_deg: number;
}

export interface RenderRequest {
  camera: CameraSpec;
  width: number;
  height: number;
  stepsize_voxels: number;
  tf?: TfPoint[];
  t?: number;
}

export interface ModelInfo {
  config: { head: string; [key: string]: unknown };
  memory: { network: number; grid: number; total: number };
  temporal_span: [number, number] | null;
  native_resolution: number;
  tf_presets: Record<string, TfPoint[]>;
}
