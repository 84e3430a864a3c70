import * as THREE from "three";

export const PICK_RADIUS_PX = 8;

/**
 * Screen-space point picking: project every point with the camera, keep
 * those within `radiusPx` of the click, and return the one nearest to the
 * camera (depth tie-break). Returns the point index or null when nothing
 * is inside the pick radius.
 */
export function pickPoint(
  positions: Float32Array,
  camera: THREE.Camera,
  clickX: number,
  clickY: number,
  width: number,
  height: number,
  radiusPx: number = PICK_RADIUS_PX,
): number | null {
  const v = new THREE.Vector3();
  let best: number | null = null;
  let bestDepth = Infinity;
  const r2 = radiusPx * radiusPx;
  for (let i = 0; i < positions.length / 3; i++) {
    v.set(positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]);
    v.project(camera);
    if (v.z < -1 || v.z > 1) continue; // outside the view frustum
    const sx = ((v.x + 1) / 2) * width;
    const sy = ((1 - v.y) / 2) * height;
    const dx = sx - clickX;
    const dy = sy - clickY;
    if (dx * dx + dy * dy > r2) continue;
    if (v.z < bestDepth) {
      bestDepth = v.z;
      best = i;
    }
  }
  return best;
}

/** Screen coordinates of one point under the camera (test + overlay helper). */
export function projectToScreen(
  point: [number, number, number],
  camera: THREE.Camera,
  width: number,
  height: number,
): { x: number; y: number } {
  const v = new THREE.Vector3(...point).project(camera);
  return { x: ((v.x + 1) / 2) * width, y: ((1 - v.y) / 2) * height };
}
