import { describe, expect, it } from 'vitest';

import {
  DEFAULT_STATE,
  cameraFromOrbit,
  clampOrbit,
  deserializeState,
  renderRequestFromState,
  serializeState,
} from '../src/state.js';

describe('orbit camera', () => {
  it('places the eye on the sphere around the target', () => {
    const cam = cameraFromOrbit(
      { azimuthDeg: 0, elevationDeg: 0, distance: 2, target: [0.5, 0.5, 0.5] },
      45,
    );
    expect(cam.eye[0]).toBeCloseTo(0.5, 10);
    expect(cam.eye[1]).toBeCloseTo(0.5, 10);
    expect(cam.eye[2]).toBeCloseTo(2.5, 10);
    const d = Math.hypot(
      cam.eye[0] - 0.5, cam.eye[1] - 0.5, cam.eye[2] - 0.5,
    );
    expect(d).toBeCloseTo(2, 10);
  });

  it('clamps elevation and distance', () => {
    const o = clampOrbit({ azimuthDeg: 725, elevationDeg: 120, distance: 100, target: [0, 0, 0] });
    expect(o.azimuthDeg).toBeCloseTo(5);
    expect(o.elevationDeg).toBe(85);
    expect(o.distance).toBe(20);
  });

  it('maps to a valid camera for any elevation input', () => {
    for (const el of [-200, -90, 0, 90, 200]) {
      const cam = cameraFromOrbit(
        { azimuthDeg: 10, elevationDeg: el, distance: 2, target: [0.5, 0.5, 0.5] },
        45,
      );
      // never collinear with the up vector
      const dy = Math.abs(cam.eye[1] - 0.5);
      expect(dy).toBeLessThan(2 * Math.sin((86 * Math.PI) / 180));
    }
  });
});

describe('render requests', () => {
  it('uses preview resolution while interacting', () => {
    const req = renderRequestFromState(DEFAULT_STATE, { preview: true });
    expect(req.width).toBe(DEFAULT_STATE.previewResolution);
    const full = renderRequestFromState(DEFAULT_STATE, { preview: false });
    expect(full.width).toBe(DEFAULT_STATE.resolution);
  });

  it('omits t for non-temporal state and tf when asked', () => {
    const req = renderRequestFromState(DEFAULT_STATE, { includeTf: false });
    expect(req.t).toBeUndefined();
    expect(req.tf).toBeUndefined();
  });

  it('carries the timestep when set', () => {
    const state = { ...DEFAULT_STATE, timestep: 4.5 };
    expect(renderRequestFromState(state).t).toBe(4.5);
  });
});

describe('url fragment round trip', () => {
  it('reproduces the identical render request', () => {
    const state = {
      ...DEFAULT_STATE,
      orbit: { azimuthDeg: 123.5, elevationDeg: -31, distance: 3.25, target: [0.5, 0.5, 0.5] as [number, number, number] },
      timestep: 7,
      stepsizeVoxels: 0.5,
    };
    const fragment = serializeState(state);
    const back = deserializeState(`#${fragment}`);
    expect(back).not.toBeNull();
    expect(JSON.stringify(renderRequestFromState(back!)))
      .toBe(JSON.stringify(renderRequestFromState(state)));
  });

  it('rejects garbage fragments', () => {
    expect(deserializeState('#not-json')).toBeNull();
  });
});
