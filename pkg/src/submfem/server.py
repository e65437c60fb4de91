"""Interactive WebSocket service streaming reduced coordinates.

Protocol (JSON text messages, wire floats rounded to float32):

- server -> client, once on connect:
    {"type": "init", "m": int, "rest": [3 floats per surface vertex],
     "faces": [3 indices per triangle, into the surface vertex arrays],
     "weights": [m floats per surface vertex]}
- server -> client, at most ``max_fps`` per second:
    {"type": "frame", "step": n, "u": [12m floats]}
- client -> server (first connected client controls; others read-only):
    {"type": "drag", "vertex": i, "target": [x, y, z], "stiffness": k}
        i indexes the init message's surface vertex arrays
    {"type": "release"}
    {"type": "param", "iters": n}
    {"type": "solver", "name": "mfem" | "fem"}

Malformed or unauthorized messages get {"type": "error", "message": ...}
and the session continues. One background thread owns the simulation
state; the network side exchanges immutable snapshots through queues.
"""

from __future__ import annotations

import asyncio
import json
import queue
import threading
import time
from dataclasses import dataclass, replace

import numpy as np

from .scene import Scene
from .solver import SolverError, simulation_step, subspace_fem_step


def _f32(values) -> list[float]:
    return [float(v) for v in np.asarray(values, dtype=np.float32)]


@dataclass(frozen=True)
class _Drag:
    vertex: int          # global mesh vertex id
    target: np.ndarray
    stiffness: float


class _SimThread(threading.Thread):
    """Owns the SimState; consumes control messages, produces frames."""

    def __init__(self, scene: Scene, out_queue, period: float):
        super().__init__(daemon=True)
        self.scene = scene
        self.model = scene.reduced_model()
        self.inbox: queue.Queue = queue.Queue()
        self.out_queue = out_queue
        self.period = period
        self.solver = "mfem"
        self.drag: _Drag | None = None
        self.stop_event = threading.Event()

    def run(self) -> None:
        state = self.model.rest_state()
        nv = self.scene.mesh.num_vertices
        while not self.stop_event.is_set():
            t0 = time.monotonic()
            self._drain_inbox()
            extra = self.scene.reduced_pull_force(state.time)
            if self.drag is not None:
                x = self.model.basis.positions(state.u)
                f = self.drag.stiffness * (self.drag.target - x[self.drag.vertex])
                nodal = np.zeros(3 * nv)
                nodal[self.drag.vertex + np.arange(3) * nv] = f
                drag_r = self.model.basis.project_nodal(nodal)
                extra = drag_r if extra is None else extra + drag_r
            step = simulation_step if self.solver == "mfem" else subspace_fem_step
            try:
                state, _ = step(self.model, state, extra)
            except SolverError as exc:
                self.out_queue.put(("error", f"solver failed: {exc}"))
                break
            self.out_queue.put(("frame", state.step_index, state.u.copy()))
            elapsed = time.monotonic() - t0
            if self.period > elapsed:
                self.stop_event.wait(self.period - elapsed)

    def _drain_inbox(self) -> None:
        while True:
            try:
                msg = self.inbox.get_nowait()
            except queue.Empty:
                return
            kind = msg[0]
            if kind == "drag":
                self.drag = msg[1]
            elif kind == "release":
                self.drag = None
            elif kind == "iters":
                self.model.config = replace(self.model.config,
                                            max_iterations=msg[1])
            elif kind == "solver":
                self.solver = msg[1]


class SceneServer:
    """Bind a scene to a WebSocket endpoint; see the module docstring."""

    def __init__(self, scene: Scene, realtime: bool = False,
                 max_fps: float = 60.0):
        self.scene = scene
        min_period = 1.0 / max_fps
        self.period = (max(scene.config.solver.dt, min_period)
                       if realtime else min_period)
        self._clients: dict = {}          # websocket -> connect order
        self._controller = None
        self._order = 0
        self._server = None
        self._sim: _SimThread | None = None
        self._out_queue: asyncio.Queue | None = None
        self._broadcast_task = None
        self._init_payload = self._build_init()
        surface = np.unique(scene.mesh.surface_faces)
        self._surface_vertices = surface

    def _build_init(self) -> str:
        mesh = self.scene.mesh
        surface = np.unique(mesh.surface_faces)
        remap = np.full(mesh.num_vertices, -1, dtype=np.int64)
        remap[surface] = np.arange(surface.size)
        faces = remap[mesh.surface_faces]
        return json.dumps({
            "type": "init",
            "m": self.scene.subspace.m,
            "rest": _f32(mesh.rest_positions[surface].ravel()),
            "faces": faces.ravel().tolist(),
            "weights": _f32(self.scene.subspace.W[surface].ravel()),
        })

    # -- lifecycle -------------------------------------------------------

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> int:
        from websockets.asyncio.server import serve as ws_serve

        self._out_queue = asyncio.Queue()
        loop = asyncio.get_running_loop()
        sync_queue = _ThreadToAsyncQueue(loop, self._out_queue)
        self._sim = _SimThread(self.scene, sync_queue, self.period)
        self._server = await ws_serve(self._handler, host, port)
        self._broadcast_task = asyncio.create_task(self._broadcast_loop())
        self._sim.start()
        return self._server.sockets[0].getsockname()[1]

    async def stop(self) -> None:
        if self._sim is not None:
            self._sim.stop_event.set()
            self._sim.join(timeout=5.0)
        if self._broadcast_task is not None:
            self._broadcast_task.cancel()
            try:
                await self._broadcast_task
            except asyncio.CancelledError:
                pass
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    # -- networking ------------------------------------------------------

    async def _broadcast_loop(self) -> None:
        while True:
            msg = await self._out_queue.get()
            if msg[0] == "frame":
                payload = json.dumps({"type": "frame", "step": msg[1],
                                      "u": _f32(msg[2])})
            else:
                payload = json.dumps({"type": "error", "message": msg[1]})
            for ws in list(self._clients):
                try:
                    await ws.send(payload)
                except Exception:
                    pass  # disconnects are handled by the client handler

    async def _handler(self, ws) -> None:
        await ws.send(self._init_payload)
        self._clients[ws] = self._order
        self._order += 1
        if self._controller is None:
            self._controller = ws
        try:
            async for raw in ws:
                await self._handle_message(ws, raw)
        finally:
            self._clients.pop(ws, None)
            if self._controller is ws:
                self._controller = min(self._clients,
                                       key=self._clients.get,
                                       default=None)

    async def _handle_message(self, ws, raw) -> None:
        async def reject(message: str) -> None:
            await ws.send(json.dumps({"type": "error", "message": message}))

        try:
            msg = json.loads(raw)
            if not isinstance(msg, dict):
                raise TypeError("message must be an object")
            kind = msg["type"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            await reject(f"malformed message: {exc}")
            return
        if ws is not self._controller:
            await reject("read-only client: control messages ignored")
            return

        try:
            if kind == "drag":
                surf_idx = int(msg["vertex"])
                if not 0 <= surf_idx < self._surface_vertices.size:
                    raise ValueError("surface vertex index out of range")
                target = np.asarray(msg["target"], dtype=np.float64)
                if target.shape != (3,) or not np.all(np.isfinite(target)):
                    raise ValueError("target must be 3 finite floats")
                stiffness = float(msg["stiffness"])
                if not np.isfinite(stiffness) or stiffness < 0:
                    raise ValueError("stiffness must be non-negative")
                self._sim.inbox.put(("drag", _Drag(
                    int(self._surface_vertices[surf_idx]), target, stiffness)))
            elif kind == "release":
                self._sim.inbox.put(("release",))
            elif kind == "param":
                iters = int(msg["iters"])
                if iters < 1:
                    raise ValueError("iters must be >= 1")
                self._sim.inbox.put(("iters", iters))
            elif kind == "solver":
                name = str(msg["name"])
                if name not in ("mfem", "fem"):
                    raise ValueError(f"unknown solver {name!r}")
                self._sim.inbox.put(("solver", name))
            else:
                raise ValueError(f"unknown message type {kind!r}")
        except (KeyError, TypeError, ValueError) as exc:
            await reject(f"invalid {kind} message: {exc}")


class _ThreadToAsyncQueue:
    """put() from any thread, delivered into an asyncio.Queue."""

    def __init__(self, loop: asyncio.AbstractEventLoop, target: asyncio.Queue):
        self._loop = loop
        self._target = target

    def put(self, item) -> None:
        self._loop.call_soon_threadsafe(self._target.put_nowait, item)


def serve(scene: Scene, host: str, port: int, realtime: bool = False) -> None:
    """Blocking entry point used by the CLI."""

    async def main() -> None:
        server = SceneServer(scene, realtime=realtime)
        bound = await server.start(host, port)
        print(f"serving scene on ws://{host}:{bound}")
        try:
            await asyncio.Future()
        finally:
            await server.stop()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
