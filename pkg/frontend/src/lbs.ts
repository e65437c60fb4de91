/**
 * Client-side linear blend skinning reconstruction.
 *
 * The server streams reduced coordinates `u` of length 12m, blocked by
 * dimension: `u = [u_x; u_y; u_z]`, each block of length 4m, where
 * `u_d[4j .. 4j+3]` is row `d` of handle j's 3x4 affine transform
 * expressed as a displacement from rest. Surface positions are
 *
 *   x_i = rest_i + sum_j w_ij * (T_j @ [rest_i; 1])
 *
 * matching the server's position basis exactly; u = 0 is the rest pose.
 */
import type { InitMessage } from "./protocol";

export interface ClientSubspace {
  m: number;
  numVertices: number;
  /** Flat xyz rest positions, length 3 * numVertices. */
  rest: Float64Array;
  /** Row-major weights, numVertices x m. */
  weights: Float64Array;
  /** Flat triangle indices into the surface vertex arrays. */
  faces: Uint32Array;
}

export function subspaceFromInit(init: InitMessage): ClientSubspace {
  return {
    m: init.m,
    numVertices: init.rest.length / 3,
    rest: Float64Array.from(init.rest),
    weights: Float64Array.from(init.weights),
    faces: Uint32Array.from(init.faces),
  };
}

/**
 * Reconstruct flat xyz surface positions from reduced coordinates.
 *
 * Throws if `u` has the wrong length. Pass `out` to reuse a buffer.
 */
export function lbsReconstruct(
  u: ArrayLike<number>,
  sub: ClientSubspace,
  out?: Float64Array,
): Float64Array {
  const { m, numVertices, rest, weights } = sub;
  if (u.length !== 12 * m) {
    throw new Error(`expected ${12 * m} reduced coordinates, got ${u.length}`);
  }
  const x = out ?? new Float64Array(3 * numVertices);
  const q = 4 * m;
  for (let i = 0; i < numVertices; i++) {
    const rx = rest[3 * i];
    const ry = rest[3 * i + 1];
    const rz = rest[3 * i + 2];
    let px = rx;
    let py = ry;
    let pz = rz;
    for (let j = 0; j < m; j++) {
      const w = weights[i * m + j];
      if (w === 0) continue;
      const c = 4 * j;
      px += w * (u[c] * rx + u[c + 1] * ry + u[c + 2] * rz + u[c + 3]);
      py +=
        w * (u[q + c] * rx + u[q + c + 1] * ry + u[q + c + 2] * rz + u[q + c + 3]);
      pz +=
        w *
        (u[2 * q + c] * rx +
          u[2 * q + c + 1] * ry +
          u[2 * q + c + 2] * rz +
          u[2 * q + c + 3]);
    }
    x[3 * i] = px;
    x[3 * i + 1] = py;
    x[3 * i + 2] = pz;
  }
  return x;
}
