import { Viewer } from "./viewer";

const params = new URLSearchParams(window.location.search);
const url = params.get("ws") ?? "ws://127.0.0.1:8765";

const container = document.getElementById("app");
if (container === null) throw new Error("missing #app container");

const socket = new WebSocket(url);
const viewer = new Viewer(container, socket);

const iters = document.getElementById("iters") as HTMLInputElement | null;
iters?.addEventListener("change", () => {
  const n = parseInt(iters.value, 10);
  if (Number.isFinite(n) && n >= 1) viewer.setIterations(n);
});

const solver = document.getElementById("solver") as HTMLSelectElement | null;
solver?.addEventListener("change", () => {
  if (solver.value === "mfem" || solver.value === "fem") {
    viewer.setSolver(solver.value);
  }
});
