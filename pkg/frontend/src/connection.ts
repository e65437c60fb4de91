/**
 * Socket wrapper: validates incoming messages, keeps only the latest
 * frames (bounded slot, no unbounded queueing), and serializes outgoing
 * client messages.
 */
import type {
  ClientMessage,
  FrameMessage,
  InitMessage,
  ServerMessage,
} from "./protocol";
import { parseServerMessage } from "./protocol";

export interface ConnectionEvents {
  onInit?: (init: InitMessage) => void;
  onError?: (message: string) => void;
}

/** Minimal socket surface so tests can substitute a fake. */
export interface SocketLike {
  send(data: string): void;
  addEventListener(type: "message", fn: (ev: { data: unknown }) => void): void;
}

export class Connection {
  private init_: InitMessage | null = null;
  /** Latest frames, newest last; capped so slow renderers skip, not lag. */
  private frames: FrameMessage[] = [];
  private readonly queueCap = 4;

  constructor(
    private readonly socket: SocketLike,
    private readonly events: ConnectionEvents = {},
  ) {
    socket.addEventListener("message", (ev) => {
      if (typeof ev.data === "string") this.handleRaw(ev.data);
    });
  }

  get init(): InitMessage | null {
    return this.init_;
  }

  handleRaw(raw: string): void {
    let msg: ServerMessage;
    try {
      msg = parseServerMessage(raw);
    } catch (err) {
      console.warn("dropped invalid server message:", err);
      return;
    }
    if (msg.type === "init") {
      this.init_ = msg;
      this.events.onInit?.(msg);
    } else if (msg.type === "frame") {
      if (this.init_ === null) {
        console.warn("dropped frame received before init");
        return;
      }
      if (msg.u.length !== 12 * this.init_.m) {
        console.warn(
          `dropped frame with ${msg.u.length} coordinates, ` +
            `expected ${12 * this.init_.m}`,
        );
        return;
      }
      this.frames.push(msg);
      if (this.frames.length > this.queueCap) {
        this.frames.splice(0, this.frames.length - this.queueCap);
      }
    } else {
      this.events.onError?.(msg.message);
    }
  }

  /** Newest pending frame, discarding older ones; null if none arrived. */
  takeLatestFrame(): FrameMessage | null {
    const latest = this.frames.pop() ?? null;
    this.frames.length = 0;
    return latest;
  }

  send(msg: ClientMessage): void {
    this.socket.send(JSON.stringify(msg));
  }
}
