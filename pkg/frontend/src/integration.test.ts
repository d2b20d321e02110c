// Scripted end-to-end run against a live server: spawns `smoke serve`,
// loads 1e5 flight rows, brushes every carrier bin through the dashboard
// controller, and cross-checks the models against direct /brush calls.
//
// Set RUN_INTEGRATION=1 to enable (needs the python package installed).

import { spawn, type ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { HttpApi } from "./api.js";
import { Dashboard, LATENCY_BUDGET_MS, badgeState } from "./state.js";

const PORT = 8765 + Math.floor(Math.random() * 200);
const BASE = `http://127.0.0.1:${PORT}`;
const DIMS = ["latlon_bin", "day_bin", "delay_bin", "carrier"];
const enabled = process.env.RUN_INTEGRATION === "1";

let server: ChildProcess | null = null;

async function waitForServer(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const r = await fetch(`${BASE}/healthz`);
      if (r.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("server did not come up");
}

beforeAll(async () => {
  if (!enabled) return;
  server = spawn("python3", ["-m", "smoke.cli", "serve", "--port", String(PORT)], {
    stdio: "ignore",
  });
  await waitForServer();
}, 40_000);

afterAll(() => {
  server?.kill();
});

describe.runIf(enabled)("dashboard against a live server", () => {
  it("brushing every carrier bin matches direct /brush responses", async () => {
    const api = new HttpApi(BASE);
    const dash = new Dashboard(api);
    await dash.init({ params: { n: 100_000, seed: 7 }, dims: DIMS, strategy: "btft" });
    expect(dash.rowCount).toBe(100_000);

    const carrierKeys = dash.view("carrier").bins.map((b) => b.key);
    expect(carrierKeys.length).toBe(29);

    for (const key of carrierKeys) {
      const applied = await dash.brushBins("carrier", [key]);
      expect(applied).toBe(true);
      // the same brush issued directly must agree with every chart model
      const direct = await api.brush(dash.sessionId, "carrier", [key]);
      for (const view of direct.views) {
        const model = dash.counts(view.view_id);
        for (const bin of view.bins) {
          expect(model.get(bin.key)).toBe(bin.count);
        }
      }
      // badge state obeys the 150 ms rule against the reported latency
      const latency = dash.view("carrier").last_latency_ms;
      expect(latency).not.toBeNull();
      expect(dash.badge("carrier")).toBe(latency! > LATENCY_BUDGET_MS ? "warn" : "ok");
    }
  }, 120_000);

  it("brush then clear restores the original counts", async () => {
    const api = new HttpApi(BASE);
    const dash = new Dashboard(api);
    await dash.init({ params: { n: 100_000, seed: 11 }, dims: DIMS, strategy: "btft" });
    const key = dash.view("carrier").bins[0].key;
    await dash.brushBins("carrier", [key]);
    expect(dash.counts("delay_bin")).not.toEqual(dash.originalCounts("delay_bin"));
    await dash.clearBrush();
    for (const dim of DIMS) {
      expect(dash.counts(dim)).toEqual(dash.originalCounts(dim));
    }
  }, 60_000);

  it("badge transitions to warn above the budget", () => {
    expect(badgeState(LATENCY_BUDGET_MS + 0.01)).toBe("warn");
    expect(badgeState(LATENCY_BUDGET_MS)).toBe("ok");
  });
});
