import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import { Label } from "./api";
import { Corner } from "./session";
import { pickPoint } from "./picking";

const CORNER_COLORS = [0xff5252, 0xffd740, 0x40c4ff]; // A, B, C
const CORNER_LABELS = ["A", "B (shared)", "C"];

export class CloudViewer {
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera;
  private readonly renderer: THREE.WebGLRenderer;
  private readonly controls: OrbitControls;
  private cloud: THREE.Points | null = null;
  private positions = new Float32Array(0);
  private cornerMarkers: THREE.Mesh[] = [];
  private boxWire: THREE.LineSegments | null = null;

  constructor(private readonly canvas: HTMLCanvasElement) {
    this.camera = new THREE.PerspectiveCamera(
      60,
      canvas.clientWidth / canvas.clientHeight,
      0.01,
      100,
    );
    this.camera.position.set(2.5, -2.5, 2.0);
    this.camera.up.set(0, 0, 1); // z is up in sensor space
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.renderer.setSize(canvas.clientWidth, canvas.clientHeight, false);
    this.scene.background = new THREE.Color(0x111418);
    this.scene.add(new THREE.AxesHelper(0.5));
    this.controls = new OrbitControls(this.camera, canvas);
    this.controls.target.set(0, 0, 0.2);

    const animate = () => {
      requestAnimationFrame(animate);
      this.controls.update();
      this.renderer.render(this.scene, this.camera);
    };
    animate();

    window.addEventListener("resize", () => this.resize());
  }

  private resize(): void {
    const w = this.canvas.clientWidth;
    const h = this.canvas.clientHeight;
    this.camera.aspect = w / h;
    this.camera.updateProjectionMatrix();
    this.renderer.setSize(w, h, false);
  }

  setCloud(points: number[][]): void {
    if (this.cloud) this.scene.remove(this.cloud);
    this.positions = new Float32Array(points.length * 3);
    points.forEach((p, i) => this.positions.set(p, 3 * i));
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute("position", new THREE.BufferAttribute(this.positions, 3));
    const material = new THREE.PointsMaterial({ color: 0x9ecbff, size: 0.012 });
    this.cloud = new THREE.Points(geometry, material);
    this.scene.add(this.cloud);
    this.clearOverlays();
  }

  get pointCount(): number {
    return this.positions.length / 3;
  }

  /** Index of the cloud point under a click, or null outside the pick radius. */
  pickAt(clientX: number, clientY: number): number | null {
    const rect = this.canvas.getBoundingClientRect();
    this.camera.updateMatrixWorld();
    return pickPoint(
      this.positions,
      this.camera,
      clientX - rect.left,
      clientY - rect.top,
      rect.width,
      rect.height,
    );
  }

  pointAt(index: number): Corner {
    return [
      this.positions[3 * index],
      this.positions[3 * index + 1],
      this.positions[3 * index + 2],
    ];
  }

  showCorners(corners: Corner[]): void {
    for (const marker of this.cornerMarkers) this.scene.remove(marker);
    this.cornerMarkers = corners.map((corner, i) => {
      const marker = new THREE.Mesh(
        new THREE.SphereGeometry(0.015),
        new THREE.MeshBasicMaterial({ color: CORNER_COLORS[i] }),
      );
      marker.position.set(...corner);
      this.scene.add(marker);
      return marker;
    });
  }

  showBox(label: Label | null): void {
    if (this.boxWire) {
      this.scene.remove(this.boxWire);
      this.boxWire = null;
    }
    if (!label) return;
    const [l, w, h] = label.size;
    const edges = new THREE.EdgesGeometry(new THREE.BoxGeometry(l, w, h));
    this.boxWire = new THREE.LineSegments(
      edges,
      new THREE.LineBasicMaterial({ color: 0x69f0ae }),
    );
    this.boxWire.position.set(...label.center);
    this.boxWire.rotation.z = label.yaw;
    this.scene.add(this.boxWire);
  }

  clearOverlays(): void {
    this.showCorners([]);
    this.showBox(null);
  }

  static cornerName(index: number): string {
    return CORNER_LABELS[index] ?? "?";
  }
}
