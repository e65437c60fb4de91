/**
 * Drag interaction state machine: picking, throttled drag messages, and
 * nearest-vertex ray picking as a pure function (the render layer feeds
 * it rays from the camera).
 */
import type { ClientMessage } from "./protocol";

export interface InteractionParams {
  stiffness: number;
  iterations: number;
  solver: "mfem" | "fem";
}

export type SendFn = (msg: ClientMessage) => void;
export type ClockFn = () => number;

/**
 * Emits protocol messages for a pick/drag/release cycle.
 *
 * Drag messages are throttled to at most one per `minIntervalMs` (default
 * 1000/60, the server's frame cap); the latest target always wins, so a
 * trailing message is flushed when the interval elapses mid-drag. No drag
 * message is ever sent without a picked vertex.
 */
export class DragController {
  private picked: number | null = null;
  private lastSent = -Infinity;
  private pending: [number, number, number] | null = null;

  constructor(
    private readonly send: SendFn,
    private readonly now: ClockFn = () => performance.now(),
    private readonly minIntervalMs = 1000 / 60,
    public params: InteractionParams = {
      stiffness: 500,
      iterations: 5,
      solver: "mfem",
    },
  ) {}

  get pickedVertex(): number | null {
    return this.picked;
  }

  pick(vertex: number | null): void {
    if (this.picked !== null && vertex !== this.picked) this.release();
    this.picked = vertex;
    this.pending = null;
  }

  /** Called on every pointer move while dragging. */
  move(target: [number, number, number]): void {
    if (this.picked === null) return;
    this.pending = target;
    this.flush();
  }

  /** Send the pending drag if the throttle interval has elapsed. */
  flush(): void {
    if (this.picked === null || this.pending === null) return;
    const t = this.now();
    if (t - this.lastSent < this.minIntervalMs) return;
    this.send({
      type: "drag",
      vertex: this.picked,
      target: this.pending,
      stiffness: this.params.stiffness,
    });
    this.lastSent = t;
    this.pending = null;
  }

  release(): void {
    if (this.picked === null) return;
    this.picked = null;
    this.pending = null;
    this.send({ type: "release" });
  }

  setIterations(iters: number): void {
    this.params.iterations = iters;
    this.send({ type: "param", iters });
  }

  setSolver(name: "mfem" | "fem"): void {
    this.params.solver = name;
    this.send({ type: "solver", name });
  }
}

/**
 * Index of the vertex nearest a ray, or null if none is within
 * `maxDistance` of it. Positions are flat xyz; the ray direction must be
 * normalized. Vertices behind the origin are ignored.
 */
export function nearestVertexToRay(
  origin: [number, number, number],
  direction: [number, number, number],
  positions: ArrayLike<number>,
  maxDistance: number,
): number | null {
  let best: number | null = null;
  let bestDist = maxDistance;
  const n = positions.length / 3;
  for (let i = 0; i < n; i++) {
    const dx = positions[3 * i] - origin[0];
    const dy = positions[3 * i + 1] - origin[1];
    const dz = positions[3 * i + 2] - origin[2];
    const along = dx * direction[0] + dy * direction[1] + dz * direction[2];
    if (along < 0) continue;
    const px = dx - along * direction[0];
    const py = dy - along * direction[1];
    const pz = dz - along * direction[2];
    const dist = Math.sqrt(px * px + py * py + pz * pz);
    if (dist < bestDist) {
      bestDist = dist;
      best = i;
    }
  }
  return best;
}
