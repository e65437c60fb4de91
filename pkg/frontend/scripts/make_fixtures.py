"""Regenerate the viewer test fixtures from the simulation engine.

Run from the repository root with the Python package installed:

    python3 frontend/scripts/make_fixtures.py

Produces two files under frontend/tests/fixtures/:

- roundtrip.json: an init payload, 100 random wire-precision reduced
  coordinate vectors, and the server-side surface positions for each, so
  the client LBS reconstruction can be checked against the server.
- drag_session.json: raw protocol messages recorded from a live server
  session where a tip vertex is dragged toward a target, for protocol
  schema validation and the drag-response test.
"""

import asyncio
import json
from pathlib import Path

import numpy as np

from submfem.scene import SceneConfig, build_scene
from submfem.server import SceneServer

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

SCENE = {
    "mesh": {"box": {"size": [1.0, 0.25, 0.25], "divisions": [4, 1, 1]}},
    "materials": {"0": {"youngs": 2e5, "poisson": 0.3, "density": 1000.0}},
    "pinned": {"box": {"min": [-1e-9, -1.0, -1.0], "max": [1e-9, 1.0, 1.0]}},
    "subspace": {"modes": 3, "cubature": 12, "seed": 0},
    "solver": {"dt": 0.02, "iterations": 5, "tol": 1e-7, "model": "fcr"},
}


def make_roundtrip(scene) -> None:
    init = json.loads(SceneServer(scene)._build_init())
    surface = np.unique(scene.mesh.surface_faces)
    rng = np.random.default_rng(42)
    r = scene.subspace.basis.r
    frames = []
    positions = []
    for _ in range(100):
        u = 0.1 * rng.standard_normal(r)
        wire = np.asarray(u, dtype=np.float32)
        frames.append([float(v) for v in wire])
        positions.append(
            scene.subspace.basis.positions(u)[surface].ravel().tolist())
    out = {"init": init, "frames": frames, "serverPositions": positions}
    (FIXTURES / "roundtrip.json").write_text(json.dumps(out))
    print(f"roundtrip.json: {len(frames)} frames, "
          f"{surface.size} surface vertices")


def lbs_positions(init, u):
    m = init["m"]
    rest = np.asarray(init["rest"], dtype=np.float64).reshape(-1, 3)
    w = np.asarray(init["weights"], dtype=np.float64).reshape(-1, m)
    u = np.asarray(u, dtype=np.float64)
    xbar = np.concatenate([rest, np.ones((rest.shape[0], 1))], axis=1)
    out = rest.copy()
    for j in range(m):
        t = np.vstack([u[d * 4 * m + 4 * j: d * 4 * m + 4 * j + 4]
                       for d in range(3)])
        out += w[:, j:j + 1] * (xbar @ t.T)
    return out


def make_drag_session(scene) -> None:
    from websockets.asyncio.client import connect

    surface = np.unique(scene.mesh.surface_faces)
    tip = int(np.argmax(scene.mesh.rest_positions[surface, 0]))
    target = (scene.mesh.rest_positions[surface[tip]]
              + np.array([0.0, 0.0, 0.4]))
    messages = []

    async def session():
        server = SceneServer(scene)
        port = await server.start("127.0.0.1", 0)
        try:
            async with connect(f"ws://127.0.0.1:{port}",
                               open_timeout=10) as ws:
                async def recv():
                    raw = await asyncio.wait_for(ws.recv(), timeout=30)
                    messages.append({"dir": "recv", "raw": raw})
                    return json.loads(raw)

                async def send(payload):
                    raw = json.dumps(payload)
                    messages.append({"dir": "send", "raw": raw})
                    await ws.send(raw)

                init = await recv()
                assert init["type"] == "init"
                first = await recv()
                while first["type"] != "frame":
                    first = await recv()
                await send({"type": "drag", "vertex": tip,
                            "target": target.tolist(), "stiffness": 120.0})
                last_step, post = first["step"], []
                while len(post) < 12:
                    fr = await recv()
                    if fr["type"] != "frame" or fr["step"] <= last_step:
                        messages.pop()
                        continue
                    last_step = fr["step"]
                    post.append(fr)
                await send({"type": "release"})
                return init, first, post
        finally:
            await server.stop()

    init, first, post = asyncio.run(session())
    d0 = float(np.linalg.norm(lbs_positions(init, first["u"])[tip] - target))
    dists = [float(np.linalg.norm(lbs_positions(init, fr["u"])[tip] - target))
             for fr in post]
    print(f"drag distances: d0={d0:.4f} " +
          " ".join(f"{d:.4f}" for d in dists))
    window = [d0] + dists[:10]
    assert all(b < a for a, b in zip(window, window[1:])), \
        "drag response not monotone; adjust stiffness or target"
    out = {"messages": messages, "pickedVertex": tip,
           "target": target.tolist()}
    (FIXTURES / "drag_session.json").write_text(json.dumps(out))
    print(f"drag_session.json: {len(messages)} messages")


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    make_roundtrip(build_scene(SceneConfig.from_dict(SCENE)))
    # Gravity off for the drag recording so the settling transient does not
    # mask the drag response; low stiffness keeps the approach monotone.
    drag_scene = dict(SCENE)
    drag_scene["solver"] = dict(SCENE["solver"], gravity=[0.0, 0.0, 0.0])
    make_drag_session(build_scene(SceneConfig.from_dict(drag_scene)))


if __name__ == "__main__":
    main()
