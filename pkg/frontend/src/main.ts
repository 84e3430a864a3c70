import { ApiClient, CloudRecord } from "./api";
import { AnnotationSession } from "./session";
import { CloudViewer } from "./viewer";

const api = new ApiClient("");

const canvas = document.getElementById("viewport") as HTMLCanvasElement;
const statusEl = document.getElementById("status") as HTMLElement;
const bannerEl = document.getElementById("banner") as HTMLElement;
const cloudInfoEl = document.getElementById("cloud-info") as HTMLElement;
const confirmBtn = document.getElementById("confirm") as HTMLButtonElement;
const retryBtn = document.getElementById("retry") as HTMLButtonElement;
const nextBtn = document.getElementById("next") as HTMLButtonElement;
const thresholdInput = document.getElementById("threshold") as HTMLInputElement;
const thresholdValue = document.getElementById("threshold-value") as HTMLElement;

const viewer = new CloudViewer(canvas);
let session: AnnotationSession | null = null;

function showBanner(message: string | null): void {
  bannerEl.textContent = message ?? "";
  bannerEl.style.display = message ? "block" : "none";
}

function render(): void {
  if (!session) return;
  statusEl.textContent =
    session.status === "picking"
      ? `picking corner ${"ABC"[session.corners.length] ?? ""} ` +
        `(${session.corners.length}/3, B is the shared corner)`
      : session.status;
  viewer.showCorners(session.corners);
  viewer.showBox(session.preview?.label ?? null);
  confirmBtn.disabled = session.status !== "reviewing";
  retryBtn.disabled = session.status !== "reviewing";
}

async function loadCloud(record: CloudRecord): Promise<void> {
  const data = await api.getCloudPoints(record.cloud_id);
  viewer.setCloud(data.points);
  cloudInfoEl.textContent = `${record.cloud_id} - ${data.point_count} points`;
  session = new AnnotationSession(record.cloud_id, api,
    parseFloat(thresholdInput.value), {
      onChange: render,
      onError: showBanner,
    });
  const existing = await api.getLabel(record.cloud_id);
  if (existing) {
    viewer.showBox(JSON.parse(existing));
    showBanner("cloud already labeled; picking replaces the stored box");
  } else {
    showBanner(null);
  }
  render();
}

async function loadNextUnlabeled(): Promise<void> {
  try {
    const records = await api.listClouds();
    const next = records.find((r) => !r.labeled) ?? records[0];
    if (!next) {
      showBanner("no clouds on the server; upload one first");
      return;
    }
    await loadCloud(next);
  } catch (err) {
    showBanner(`service unreachable: ${String(err)}`);
  }
}

canvas.addEventListener("click", (event) => {
  if (!session || session.status !== "picking") return;
  const index = viewer.pickAt(event.clientX, event.clientY);
  if (index === null) {
    showBanner("no point within the pick radius");
    return;
  }
  showBanner(null);
  void session.addCorner(viewer.pointAt(index));
});

confirmBtn.addEventListener("click", () => {
  void session?.confirm().then(() => loadNextUnlabeled());
});

retryBtn.addEventListener("click", () => {
  session?.retry();
  showBanner(null);
});

nextBtn.addEventListener("click", () => void loadNextUnlabeled());

thresholdInput.addEventListener("input", () => {
  thresholdValue.textContent = `${thresholdInput.value} m`;
  if (session) session.heightThreshold = parseFloat(thresholdInput.value);
});

void loadNextUnlabeled();
