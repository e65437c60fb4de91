/**
 * Browser viewer: renders the streamed surface with three.js, rebuilding
 * positions each frame via CPU linear blend skinning, and turns pointer
 * input into pick / drag / release protocol messages.
 */
import * as THREE from "three";
import { OrbitControls } from "three/addons/controls/OrbitControls.js";

import { Connection } from "./connection";
import type { ClientSubspace } from "./lbs";
import { lbsReconstruct, subspaceFromInit } from "./lbs";
import { DragController, nearestVertexToRay } from "./interaction";
import type { InitMessage } from "./protocol";

export class Viewer {
  private readonly scene = new THREE.Scene();
  private readonly camera: THREE.PerspectiveCamera;
  private readonly renderer: THREE.WebGLRenderer;
  private readonly controls: OrbitControls;
  private readonly raycaster = new THREE.Raycaster();
  private readonly connection: Connection;
  private readonly drag: DragController;

  private subspace: ClientSubspace | null = null;
  private mesh: THREE.Mesh | null = null;
  private positions: Float64Array | null = null;
  private dragPlane = new THREE.Plane();

  constructor(container: HTMLElement, socket: WebSocket) {
    this.camera = new THREE.PerspectiveCamera(
      45,
      container.clientWidth / container.clientHeight,
      0.01,
      100,
    );
    this.camera.position.set(1.2, 0.8, 1.6);
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setSize(container.clientWidth, container.clientHeight);
    container.appendChild(this.renderer.domElement);
    this.controls = new OrbitControls(this.camera, this.renderer.domElement);

    this.scene.background = new THREE.Color(0x20242c);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.5));
    const sun = new THREE.DirectionalLight(0xffffff, 1.2);
    sun.position.set(2, 3, 2);
    this.scene.add(sun);

    this.connection = new Connection(socket, {
      onInit: (init) => this.buildMesh(init),
      onError: (message) => console.error("server:", message),
    });
    this.drag = new DragController((msg) => this.connection.send(msg));

    const el = this.renderer.domElement;
    el.addEventListener("pointerdown", (ev) => this.onPointerDown(ev));
    el.addEventListener("pointermove", (ev) => this.onPointerMove(ev));
    el.addEventListener("pointerup", () => {
      this.drag.release();
      this.controls.enabled = true;
    });
    this.renderer.setAnimationLoop(() => this.tick());
  }

  setIterations(iters: number): void {
    this.drag.setIterations(iters);
  }

  setSolver(name: "mfem" | "fem"): void {
    this.drag.setSolver(name);
  }

  private buildMesh(init: InitMessage): void {
    if (this.mesh !== null) this.scene.remove(this.mesh);
    this.subspace = subspaceFromInit(init);
    this.positions = Float64Array.from(this.subspace.rest);
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute(
      "position",
      new THREE.BufferAttribute(Float32Array.from(this.subspace.rest), 3),
    );
    geometry.setIndex(new THREE.BufferAttribute(this.subspace.faces, 1));
    geometry.computeVertexNormals();
    const material = new THREE.MeshStandardMaterial({
      color: 0x4f9ddb,
      flatShading: true,
      side: THREE.DoubleSide,
    });
    this.mesh = new THREE.Mesh(geometry, material);
    this.scene.add(this.mesh);
  }

  private tick(): void {
    const frame = this.connection.takeLatestFrame();
    if (frame !== null && this.subspace !== null && this.mesh !== null) {
      this.positions = lbsReconstruct(
        frame.u,
        this.subspace,
        this.positions ?? undefined,
      );
      const attr = this.mesh.geometry.getAttribute(
        "position",
      ) as THREE.BufferAttribute;
      (attr.array as Float32Array).set(this.positions);
      attr.needsUpdate = true;
      this.mesh.geometry.computeVertexNormals();
    }
    this.drag.flush();
    this.controls.update();
    this.renderer.render(this.scene, this.camera);
  }

  private pointerRay(ev: PointerEvent): THREE.Ray {
    const rect = this.renderer.domElement.getBoundingClientRect();
    const ndc = new THREE.Vector2(
      ((ev.clientX - rect.left) / rect.width) * 2 - 1,
      -((ev.clientY - rect.top) / rect.height) * 2 + 1,
    );
    this.raycaster.setFromCamera(ndc, this.camera);
    return this.raycaster.ray;
  }

  private onPointerDown(ev: PointerEvent): void {
    if (this.positions === null) return;
    const ray = this.pointerRay(ev);
    const picked = nearestVertexToRay(
      [ray.origin.x, ray.origin.y, ray.origin.z],
      [ray.direction.x, ray.direction.y, ray.direction.z],
      this.positions,
      0.05,
    );
    this.drag.pick(picked);
    if (picked !== null) {
      this.controls.enabled = false;
      const p = new THREE.Vector3(
        this.positions[3 * picked],
        this.positions[3 * picked + 1],
        this.positions[3 * picked + 2],
      );
      // Drag in the camera-facing plane through the picked vertex.
      const normal = new THREE.Vector3();
      this.camera.getWorldDirection(normal);
      this.dragPlane.setFromNormalAndCoplanarPoint(normal, p);
    }
  }

  private onPointerMove(ev: PointerEvent): void {
    if (this.drag.pickedVertex === null) return;
    const ray = this.pointerRay(ev);
    const hit = new THREE.Vector3();
    if (ray.intersectPlane(this.dragPlane, hit) !== null) {
      this.drag.move([hit.x, hit.y, hit.z]);
    }
  }
}

/** Expose the last received reduced coordinates (debug console aid). */
export type { ClientSubspace };
