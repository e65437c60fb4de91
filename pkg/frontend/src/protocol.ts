/**
 * Wire protocol schemas for the simulation service.
 *
 * JSON text messages over a WebSocket. The server sends one `init`
 * message on connect, then `frame` messages; `error` may appear at any
 * time. The client sends `drag` / `release` / `param` / `solver`.
 */
import { z } from "zod";

const finite = z.number().finite();

export const initMessageSchema = z
  .object({
    type: z.literal("init"),
    m: z.number().int().positive(),
    rest: z.array(finite),
    faces: z.array(z.number().int().nonnegative()),
    weights: z.array(finite),
  })
  .refine((msg) => msg.rest.length % 3 === 0, {
    message: "rest must hold 3 floats per surface vertex",
  })
  .refine((msg) => msg.faces.length % 3 === 0, {
    message: "faces must hold vertex index triples",
  })
  .refine((msg) => msg.weights.length === (msg.rest.length / 3) * msg.m, {
    message: "weights must hold m floats per surface vertex",
  });

export const frameMessageSchema = z
  .object({
    type: z.literal("frame"),
    step: z.number().int().nonnegative(),
    u: z.array(finite),
  })
  .refine((msg) => msg.u.length % 12 === 0, {
    message: "u must hold 12 floats per handle",
  });

export const errorMessageSchema = z.object({
  type: z.literal("error"),
  message: z.string(),
});

export const serverMessageSchema = z.union([
  initMessageSchema,
  frameMessageSchema,
  errorMessageSchema,
]);

export const dragMessageSchema = z.object({
  type: z.literal("drag"),
  vertex: z.number().int().nonnegative(),
  target: z.tuple([finite, finite, finite]),
  stiffness: finite.nonnegative(),
});

export const releaseMessageSchema = z.object({ type: z.literal("release") });

export const paramMessageSchema = z.object({
  type: z.literal("param"),
  iters: z.number().int().min(1),
});

export const solverMessageSchema = z.object({
  type: z.literal("solver"),
  name: z.enum(["mfem", "fem"]),
});

export const clientMessageSchema = z.discriminatedUnion("type", [
  dragMessageSchema,
  releaseMessageSchema,
  paramMessageSchema,
  solverMessageSchema,
]);

export type InitMessage = z.infer<typeof initMessageSchema>;
export type FrameMessage = z.infer<typeof frameMessageSchema>;
export type ErrorMessage = z.infer<typeof errorMessageSchema>;
export type ServerMessage = z.infer<typeof serverMessageSchema>;
export type DragMessage = z.infer<typeof dragMessageSchema>;
export type ClientMessage = z.infer<typeof clientMessageSchema>;

/** Parse raw text into a validated server message; throws ZodError. */
export function parseServerMessage(raw: string): ServerMessage {
  return serverMessageSchema.parse(JSON.parse(raw));
}
