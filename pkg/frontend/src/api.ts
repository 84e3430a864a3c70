export interface Label {
  cloud_id: string;
  class: string;
  center: [number, number, number];
  size: [number, number, number];
  yaw: number;
}

export interface CloudRecord {
  cloud_id: string;
  point_count: number;
  uploaded_at: number;
  labeled: boolean;
}

export interface CloudPoints {
  cloud_id: string;
  point_count: number;
  points: number[][];
}

export interface BoxPreview {
  /** exact response bytes for the box object; confirm() must persist these */
  raw: string;
  label: Label;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function expectOk(resp: Response): Promise<Response> {
  if (!resp.ok) {
    const body = await resp.text();
    throw new ApiError(resp.status, body || resp.statusText);
  }
  return resp;
}

/**
 * Extract the exact byte range of the "box" object from a JSON response body.
 * The UI never re-serializes geometry: the preview and the persisted label
 * are the server's own bytes.
 */
export function extractBoxJson(body: string): string {
  const key = body.indexOf('"box"');
  if (key < 0) throw new Error('response has no "box" field');
  const start = body.indexOf("{", key);
  if (start < 0) throw new Error('malformed "box" field');
  let depth = 0;
  let inString = false;
  let escaped = false;
  for (let i = start; i < body.length; i++) {
    const ch = body[i];
    if (inString) {
      if (escaped) escaped = false;
      else if (ch === "\\") escaped = true;
      else if (ch === '"') inString = false;
      continue;
    }
    if (ch === '"') inString = true;
    else if (ch === "{") depth += 1;
    else if (ch === "}") {
      depth -= 1;
      if (depth === 0) return body.slice(start, i + 1);
    }
  }
  throw new Error('unterminated "box" object');
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async listClouds(): Promise<CloudRecord[]> {
    const resp = await expectOk(await fetch(this.url("/clouds")));
    return (await resp.json()) as CloudRecord[];
  }

  async getCloudPoints(cloudId: string): Promise<CloudPoints> {
    const resp = await expectOk(
      await fetch(this.url(`/clouds/${encodeURIComponent(cloudId)}`)),
    );
    return (await resp.json()) as CloudPoints;
  }

  async annotateBox(
    cloudId: string,
    corners: [number, number, number][],
    heightThreshold: number,
  ): Promise<BoxPreview> {
    const resp = await expectOk(
      await fetch(this.url("/annotate/box"), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({
          cloud_id: cloudId,
          corners,
          height_threshold: heightThreshold,
        }),
      }),
    );
    const body = await resp.text();
    const raw = extractBoxJson(body);
    return { raw, label: JSON.parse(raw) as Label };
  }

  async putLabel(cloudId: string, rawLabel: string): Promise<void> {
    await expectOk(
      await fetch(this.url(`/labels/${encodeURIComponent(cloudId)}`), {
        method: "PUT",
        headers: { "Content-Type": "application/json" },
        body: rawLabel,
      }),
    );
  }

  async getLabel(cloudId: string): Promise<string | null> {
    const resp = await fetch(this.url(`/labels/${encodeURIComponent(cloudId)}`));
    if (resp.status === 404) return null;
    await expectOk(resp);
    return await resp.text();
  }

  async deleteLabel(cloudId: string): Promise<void> {
    await expectOk(
      await fetch(this.url(`/labels/${encodeURIComponent(cloudId)}`), {
        method: "DELETE",
      }),
    );
  }
}
