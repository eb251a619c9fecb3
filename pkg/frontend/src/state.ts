import type { CameraSpec, RenderRequest, TfPoint } from './types.js';

export interface OrbitState {
  azimuthDeg: number;
  elevationDeg: number;
  distance: number;
  target: [number, number, number];
}

export interface ViewerState {
  orbit: OrbitState;
  tf: TfPoint[];
  timestep: number | null;
  resolution: number;        // full-quality frame size
  previewResolution: number; // used while interacting
  stepsizeVoxels: number;
  fovYDeg: number;
}

export const DEFAULT_STATE: ViewerState = {
  orbit: { azimuthDeg: 30, elevationDeg: 20, distance: 2.4, target: [0.5, 0.5, 0.5] },
  tf: [
    { x: 0, rgb: [0, 0, 0], sigma: 0 },
    { x: 1, rgb: [1, 1, 1], sigma: 10 },
  ],
  timestep: null,
  resolution: 512,
  previewResolution: 256,
  stepsizeVoxels: 1.0,
  fovYDeg: 45,
};

const MAX_ELEVATION = 85;

export function clampOrbit(orbit: OrbitState): OrbitState {
  return {
    azimuthDeg: ((orbit.azimuthDeg % 360) + 360) % 360,
    elevationDeg: Math.max(-MAX_ELEVATION, Math.min(MAX_ELEVATION, orbit.elevationDeg)),
    distance: Math.max(0.2, Math.min(20, orbit.distance)),
    target: orbit.target,
  };
}

export function cameraFromOrbit(orbit: OrbitState, fovYDeg: number): CameraSpec {
  const o = clampOrbit(orbit);
  const az = (o.azimuthDeg * Math.PI) / 180;
  const el = (o.elevationDeg * Math.PI) / 180;
  const [tx, ty, tz] = o.target;
  const eye: [number, number, number] = [
    tx + o.distance * Math.cos(el) * Math.sin(az),
    ty + o.distance * Math.sin(el),
    tz + o.distance * Math.cos(el) * Math.cos(az),
  ];
  return { eye, target: o.target, up: [0, 1, 0], fov_y_deg: fovYDeg };
}

export function renderRequestFromState(
  state: ViewerState,
  opts: { preview?: boolean; includeTf?: boolean } = {},
): RenderRequest {
  const res = opts.preview ? state.previewResolution : state.resolution;
  const req: RenderRequest = {
    camera: cameraFromOrbit(state.orbit, state.fovYDeg),
    width: res,
    height: res,
    stepsize_voxels: opts.preview ? Math.max(state.stepsizeVoxels, 2) : state.stepsizeVoxels,
  };
  if (opts.includeTf !== false) req.tf = state.tf;
  if (state.timestep !== null) req.t = state.timestep;
  return req;
}

// The URL fragment is the shareable form of the viewer state: reloading the
// page reproduces the identical render request.
export function serializeState(state: ViewerState): string {
  const payload = {
    o: [state.orbit.azimuthDeg, state.orbit.elevationDeg, state.orbit.distance,
        ...state.orbit.target],
    tf: state.tf.map((p) => [p.x, ...p.rgb, p.sigma]),
    t: state.timestep,
    r: state.resolution,
    pr: state.previewResolution,
    s: state.stepsizeVoxels,
    fov: state.fovYDeg,
  };
  return encodeURIComponent(JSON.stringify(payload));
}

export function deserializeState(fragment: string): ViewerState | null {
  try {
    const raw = JSON.parse(decodeURIComponent(fragment.replace(/^#/, '')));
    const [az, el, dist, tx, ty, tz] = raw.o as number[];
    return {
      orbit: { azimuthDeg: az, elevationDeg: el, distance: dist, target: [tx, ty, tz] },
      tf: (raw.tf as number[][]).map((p) => ({
        x: p[0], rgb: [p[1], p[2], p[3]], sigma: p[4],
      })),
      timestep: raw.t ?? null,
      resolution: raw.r,
      previewResolution: raw.pr,
      stepsizeVoxels: raw.s,
      fovYDeg: raw.fov,
    };
  } catch {
    return null;
  }
}
