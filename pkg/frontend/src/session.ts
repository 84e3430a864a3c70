import { ApiClient, ApiError, BoxPreview } from "./api";

export type SessionStatus = "picking" | "reviewing" | "saved";

export type Corner = [number, number, number];

export interface SessionListener {
  onChange?(session: AnnotationSession): void;
  onError?(message: string): void;
}

/**
 * State machine behind one labeling pass over one cloud.
 *
 * picking --(3rd corner accepted)--> reviewing --confirm--> saved
 *                                    reviewing --retry----> picking
 *
 * The second picked corner is the shared one (the two base edges run from
 * it). The box is never computed client-side: the preview holds the server
 * response bytes, and confirm() persists exactly those bytes.
 */
export class AnnotationSession {
  status: SessionStatus = "picking";
  corners: Corner[] = [];
  preview: BoxPreview | null = null;
  lastError: string | null = null;

  constructor(
    readonly cloudId: string,
    private readonly api: ApiClient,
    public heightThreshold: number = 1.0,
    private readonly listener: SessionListener = {},
  ) {}

  private changed(): void {
    this.listener.onChange?.(this);
  }

  private fail(message: string): void {
    this.lastError = message;
    this.listener.onError?.(message);
    this.changed();
  }

  async addCorner(point: Corner): Promise<void> {
    if (this.status !== "picking") {
      throw new Error(`cannot pick a corner while ${this.status}`);
    }
    if (this.corners.length >= 3) {
      throw new Error("three corners are already picked");
    }
    this.lastError = null;
    this.corners = [...this.corners, point];
    if (this.corners.length < 3) {
      this.changed();
      return;
    }
    try {
      this.preview = await this.api.annotateBox(
        this.cloudId,
        this.corners as [Corner, Corner, Corner],
        this.heightThreshold,
      );
      this.status = "reviewing";
      this.changed();
    } catch (err) {
      // bad geometry (collinear, empty object): back to square one
      this.corners = [];
      this.preview = null;
      const message =
        err instanceof ApiError
          ? `selection rejected: ${err.message}`
          : `annotation request failed: ${String(err)}`;
      this.fail(message);
    }
  }

  async confirm(): Promise<void> {
    if (this.status !== "reviewing" || this.preview === null) {
      throw new Error(`cannot confirm while ${this.status}`);
    }
    try {
      await this.api.putLabel(this.cloudId, this.preview.raw);
      this.status = "saved";
      this.lastError = null;
      this.changed();
    } catch (err) {
      // stay in reviewing so the user can retry confirmation
      this.fail(`saving the label failed: ${String(err)}`);
    }
  }

  retry(): void {
    if (this.status !== "reviewing") {
      throw new Error(`cannot retry while ${this.status}`);
    }
    this.corners = [];
    this.preview = null;
    this.status = "picking";
    this.lastError = null;
    this.changed();
  }
}
