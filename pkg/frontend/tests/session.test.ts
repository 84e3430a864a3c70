import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError, extractBoxJson } from "../src/api";
import { AnnotationSession, Corner } from "../src/session";

const BOX_RAW =
  '{"cloud_id":"c1","class":"robot","center":[0.5,0.5,0.25],"size":[1.0,1.0,0.5],"yaw":0.0}';

function mockApi(overrides: Partial<ApiClient> = {}): ApiClient {
  const api = {
    annotateBox: vi.fn(async () => ({ raw: BOX_RAW, label: JSON.parse(BOX_RAW) })),
    putLabel: vi.fn(async () => undefined),
    getLabel: vi.fn(async () => null),
    listClouds: vi.fn(async () => []),
    getCloudPoints: vi.fn(async () => ({ cloud_id: "c1", point_count: 0, points: [] })),
    deleteLabel: vi.fn(async () => undefined),
  };
  return Object.assign(api, overrides) as unknown as ApiClient;
}

const A: Corner = [1, 0, 0];
const B: Corner = [0, 0, 0];
const C: Corner = [0, 1, 0];

describe("AnnotationSession", () => {
  it("collects three corners then requests the box and reviews", async () => {
    const api = mockApi();
    const session = new AnnotationSession("c1", api, 1.0);
    await session.addCorner(A);
    await session.addCorner(B);
    expect(session.status).toBe("picking");
    expect(api.annotateBox).not.toHaveBeenCalled();
    await session.addCorner(C);
    expect(api.annotateBox).toHaveBeenCalledWith("c1", [A, B, C], 1.0);
    expect(session.status).toBe("reviewing");
    expect(session.preview?.raw).toBe(BOX_RAW);
  });

  it("confirm persists exactly the preview bytes and saves", async () => {
    const api = mockApi();
    const session = new AnnotationSession("c1", api);
    await session.addCorner(A);
    await session.addCorner(B);
    await session.addCorner(C);
    await session.confirm();
    expect(api.putLabel).toHaveBeenCalledWith("c1", BOX_RAW);
    expect(session.status).toBe("saved");
  });

  it("retry clears corners and preview and returns to picking", async () => {
    const session = new AnnotationSession("c1", mockApi());
    await session.addCorner(A);
    await session.addCorner(B);
    await session.addCorner(C);
    session.retry();
    expect(session.status).toBe("picking");
    expect(session.corners).toHaveLength(0);
    expect(session.preview).toBeNull();
  });

  it("rejected geometry clears the selection and stays picking", async () => {
    const api = mockApi({
      annotateBox: vi.fn(async () => {
        throw new ApiError(422, "degenerate corners");
      }) as unknown as ApiClient["annotateBox"],
    });
    const errors: string[] = [];
    const session = new AnnotationSession("c1", api, 1.0, {
      onError: (m) => errors.push(m),
    });
    await session.addCorner(A);
    await session.addCorner(B);
    await session.addCorner([2, 0, 0]); // collinear with A-B on the server
    expect(session.status).toBe("picking");
    expect(session.corners).toHaveLength(0);
    expect(errors[0]).toContain("degenerate");
  });

  it("failed save stays in reviewing with an error", async () => {
    const api = mockApi({
      putLabel: vi.fn(async () => {
        throw new ApiError(503, "service down");
      }) as unknown as ApiClient["putLabel"],
    });
    const session = new AnnotationSession("c1", api);
    await session.addCorner(A);
    await session.addCorner(B);
    await session.addCorner(C);
    await session.confirm();
    expect(session.status).toBe("reviewing");
    expect(session.lastError).toContain("saving the label failed");
    expect(session.preview?.raw).toBe(BOX_RAW);
  });

  it("admits no transition outside the declared set", async () => {
    const session = new AnnotationSession("c1", mockApi());
    expect(() => session.retry()).toThrow(); // picking -> retry is not a transition
    await expect(session.confirm()).rejects.toThrow(); // picking -> confirm
    await session.addCorner(A);
    await session.addCorner(B);
    await session.addCorner(C);
    await expect(session.addCorner(A)).rejects.toThrow(); // reviewing -> pick
  });
});

describe("extractBoxJson", () => {
  it("extracts the exact box byte range", () => {
    const body = `{"box":${BOX_RAW}}`;
    expect(extractBoxJson(body)).toBe(BOX_RAW);
  });

  it("handles braces inside strings", () => {
    const raw = '{"cloud_id":"we{ird}","class":"robot","center":[0,0,0],"size":[1,1,1],"yaw":0}';
    expect(extractBoxJson(`{"box":${raw}}`)).toBe(raw);
  });

  it("rejects bodies without a box", () => {
    expect(() => extractBoxJson('{"nope":1}')).toThrow();
  });
});
