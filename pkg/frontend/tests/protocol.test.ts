import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import {
  clientMessageSchema,
  parseServerMessage,
  serverMessageSchema,
} from "../src/protocol";

const session = JSON.parse(
  readFileSync(join(__dirname, "fixtures", "drag_session.json"), "utf8"),
) as { messages: { dir: "recv" | "send"; raw: string }[] };

describe("protocol schemas", () => {
  it("every message of a recorded live session validates", () => {
    expect(session.messages.length).toBeGreaterThan(0);
    for (const { dir, raw } of session.messages) {
      const parsed = JSON.parse(raw);
      if (dir === "recv") {
        expect(() => serverMessageSchema.parse(parsed)).not.toThrow();
      } else {
        expect(() => clientMessageSchema.parse(parsed)).not.toThrow();
      }
    }
  });

  it("the session opens with init, then only frames", () => {
    const recv = session.messages.filter((m) => m.dir === "recv");
    const first = serverMessageSchema.parse(JSON.parse(recv[0].raw));
    expect(first.type).toBe("init");
    for (const m of recv.slice(1)) {
      expect(serverMessageSchema.parse(JSON.parse(m.raw)).type).toBe("frame");
    }
  });

  it.each([
    ["not json", "not json"],
    ["array payload", JSON.stringify(["frame"])],
    ["missing type", JSON.stringify({ step: 1, u: [] })],
    ["unknown type", JSON.stringify({ type: "teleport" })],
    [
      "frame with non-multiple-of-12 u",
      JSON.stringify({ type: "frame", step: 1, u: [1, 2, 3] }),
    ],
    [
      "init with mismatched weights",
      JSON.stringify({
        type: "init",
        m: 2,
        rest: [0, 0, 0],
        faces: [],
        weights: [1],
      }),
    ],
    [
      "frame with non-finite floats",
      '{"type": "frame", "step": 1, "u": [null]}',
    ],
  ])("rejects malformed server input: %s", (_label, raw) => {
    expect(() => parseServerMessage(raw)).toThrow();
  });

  it.each([
    [
      "drag with short target",
      { type: "drag", vertex: 0, target: [0, 1], stiffness: 1 },
    ],
    [
      "drag with negative stiffness",
      { type: "drag", vertex: 0, target: [0, 1, 2], stiffness: -1 },
    ],
    ["param with zero iters", { type: "param", iters: 0 }],
    ["solver full is server-only", { type: "solver", name: "full" }],
  ])("rejects invalid client message: %s", (_label, msg) => {
    expect(() => clientMessageSchema.parse(msg)).toThrow();
  });
});
