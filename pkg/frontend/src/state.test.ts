// Controller unit tests against a scripted fake server.

import { describe, expect, it } from "vitest";

import type { Api, BrushResponse, LoadResponse, ViewsResponse } from "./api.js";
import { Dashboard, badgeState } from "./state.js";

type Deferred<T> = { promise: Promise<T>; resolve: (v: T) => void };

function deferred<T>(): Deferred<T> {
  let resolve!: (v: T) => void;
  const promise = new Promise<T>((r) => (resolve = r));
  return { promise, resolve };
}

class FakeApi implements Api {
  brushCalls: Array<{ viewId: string; binKeys: string[] }> = [];
  pending: Array<Deferred<BrushResponse>> = [];
  manual = false;

  private data: Record<string, Record<string, number>> = {
    carrier: { "0": 6, "1": 3 },
    delay_bin: { "0": 5, "1": 4 },
  };

  async load(): Promise<LoadResponse> {
    return { session_id: "s1", row_count: 9, columns: ["carrier", "delay_bin"], latency_ms: 1 };
  }

  async views(): Promise<ViewsResponse> {
    return {
      views: Object.entries(this.data).map(([view_id, bins]) => ({
        view_id,
        bins: Object.entries(bins).map(([key, count]) => ({ key, count })),
      })),
      capture_ms: 2,
      strategy: "bt_ft",
      latency_ms: 1,
    };
  }

  brush(_: string, viewId: string, binKeys: string[]): Promise<BrushResponse> {
    this.brushCalls.push({ viewId, binKeys });
    const full = binKeys.length === 0;
    const resp: BrushResponse = {
      views: Object.entries(this.data).map(([view_id, bins]) => ({
        view_id,
        bins: Object.entries(bins).map(([key, count]) => ({
          key,
          // fake filtered counts: halve everything in the other views
          count: full || view_id === viewId ? count : Math.floor(count / 2),
        })),
      })),
      latency_ms: binKeys.length ? 10 : 1,
    };
    if (!this.manual) return Promise.resolve(resp);
    const d = deferred<BrushResponse>();
    this.pending.push(d);
    d.promise = d.promise.then(() => resp);
    return d.promise;
  }
}

async function freshDash(api = new FakeApi()) {
  const dash = new Dashboard(api);
  await dash.init({ dims: ["carrier", "delay_bin"] });
  return { dash, api };
}

describe("dashboard", () => {
  it("renders one model per view with original counts", async () => {
    const { dash } = await freshDash();
    expect(dash.views.map((v) => v.view_id)).toEqual(["carrier", "delay_bin"]);
    expect(dash.counts("carrier").get("0")).toBe(6);
  });

  it("applies brush responses and keeps the brushed view unchanged", async () => {
    const { dash } = await freshDash();
    await dash.brushBins("carrier", ["0"]);
    expect(dash.counts("carrier").get("0")).toBe(6);
    expect(dash.counts("delay_bin").get("0")).toBe(2);
    expect(dash.view("carrier").bins.find((b) => b.key === "0")?.highlighted).toBe(true);
  });

  it("brush then clear restores the original counts", async () => {
    const { dash } = await freshDash();
    await dash.brushBins("carrier", ["0"]);
    await dash.clearBrush();
    expect(dash.counts("delay_bin")).toEqual(dash.originalCounts("delay_bin"));
    expect(dash.brush).toBeNull();
  });

  it("bin order is stable across brushes", async () => {
    const { dash } = await freshDash();
    const before = dash.view("delay_bin").bins.map((b) => b.key);
    await dash.brushBins("carrier", ["1"]);
    expect(dash.view("delay_bin").bins.map((b) => b.key)).toEqual(before);
  });

  it("drops stale responses when brushes race", async () => {
    const api = new FakeApi();
    api.manual = true;
    const { dash } = await freshDash(api);
    const first = dash.brushBins("carrier", ["0"]);
    const second = dash.brushBins("carrier", ["1"]);
    // resolve out of order: the newer gesture lands first
    api.pending[1].resolve(undefined as never);
    await second;
    api.pending[0].resolve(undefined as never);
    expect(await first).toBe(false); // stale, dropped
    expect(await second).toBe(true);
    expect(dash.brush?.binKeys).toEqual(["1"]);
  });

  it("a brush in another view replaces the existing brush", async () => {
    const { dash } = await freshDash();
    await dash.brushBins("carrier", ["0"]);
    await dash.brushBins("delay_bin", ["1"]);
    expect(dash.brush).toEqual({ viewId: "delay_bin", binKeys: ["1"] });
    expect(dash.view("carrier").bins.every((b) => !b.highlighted)).toBe(true);
  });

  it("latency badge follows the 150 ms rule", () => {
    expect(badgeState(null)).toBe("idle");
    expect(badgeState(149.9)).toBe("ok");
    expect(badgeState(150.0)).toBe("ok");
    expect(badgeState(150.1)).toBe("warn");
  });

  it("HTTP failures surface non-fatally", async () => {
    const api = new FakeApi();
    const { dash } = await freshDash(api);
    api.brush = () => Promise.reject(new Error("boom"));
    const ok = await dash.brushBins("carrier", ["0"]);
    expect(ok).toBe(false);
    expect(dash.lastError).toContain("boom");
    expect(dash.counts("carrier").get("0")).toBe(6); // model untouched
  });
});
