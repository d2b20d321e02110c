// Dashboard controller: owns the view models and the single-brush
// lifecycle. No DOM access here, so the same code drives the charts in the
// browser and the scripted tests in node.
//
// Counts always mirror the latest *applied* server response; nothing is
// recomputed client-side. One brush may be in flight at a time: a newer
// gesture bumps a sequence number and any slower response still traveling
// is dropped when it lands.

import type { Api, ViewPayload } from "./api.js";

export const LATENCY_BUDGET_MS = 150;

export interface BinModel {
  key: string;
  count: number;
  highlighted: boolean;
}

export interface ViewModel {
  view_id: string;
  bins: BinModel[];
  last_latency_ms: number | null;
}

export type BadgeState = "idle" | "ok" | "warn";

export function badgeState(latencyMs: number | null): BadgeState {
  if (latencyMs === null) return "idle";
  return latencyMs > LATENCY_BUDGET_MS ? "warn" : "ok";
}

export interface Brush {
  viewId: string;
  binKeys: string[];
}

export class Dashboard {
  views: ViewModel[] = [];
  brush: Brush | null = null;
  sessionId = "";
  rowCount = 0;
  captureMs = 0;
  lastError: string | null = null;

  private originals = new Map<string, Map<string, number>>();
  private binOrder = new Map<string, string[]>();
  private seq = 0;
  private listeners: Array<() => void> = [];

  constructor(private api: Api) {}

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  async init(opts: {
    generator?: string;
    params?: Record<string, unknown>;
    dims: string[];
    strategy?: string;
  }): Promise<void> {
    const loaded = await this.api.load(opts.generator ?? "flights", opts.params ?? {});
    this.sessionId = loaded.session_id;
    this.rowCount = loaded.row_count;
    const resp = await this.api.views(this.sessionId, opts.dims, opts.strategy ?? "btft");
    this.captureMs = resp.capture_ms;
    this.views = resp.views.map((v) => ({
      view_id: v.view_id,
      bins: v.bins.map((b) => ({ key: b.key, count: b.count, highlighted: false })),
      last_latency_ms: null,
    }));
    for (const v of resp.views) {
      this.originals.set(v.view_id, new Map(v.bins.map((b) => [b.key, b.count])));
      this.binOrder.set(v.view_id, v.bins.map((b) => b.key));
    }
    this.notify();
  }

  view(viewId: string): ViewModel {
    const v = this.views.find((x) => x.view_id === viewId);
    if (!v) throw new Error(`no view ${viewId}`);
    return v;
  }

  // Brush bins in one view; replaces any existing brush (single-brush
  // model, even across views). Returns false if the response was stale
  // and dropped.
  async brushBins(viewId: string, binKeys: string[]): Promise<boolean> {
    const mySeq = ++this.seq;
    this.brush = binKeys.length ? { viewId, binKeys: [...binKeys] } : null;
    this.markHighlights();
    try {
      const resp = await this.api.brush(this.sessionId, viewId, binKeys);
      if (mySeq !== this.seq) return false; // a newer gesture superseded us
      this.applyResponse(resp.views, resp.latency_ms);
      return true;
    } catch (err) {
      if (mySeq === this.seq) {
        this.lastError = String(err); // surfaced, not fatal
        this.notify();
      }
      return false;
    }
  }

  async clearBrush(): Promise<boolean> {
    const viewId = this.brush?.viewId ?? this.views[0]?.view_id;
    if (!viewId) return false;
    return this.brushBins(viewId, []);
  }

  // Bin order never changes across brushes; counts come straight from the
  // server response.
  private applyResponse(payload: ViewPayload[], latencyMs: number): void {
    const byId = new Map(payload.map((v) => [v.view_id, v]));
    for (const view of this.views) {
      const update = byId.get(view.view_id);
      if (!update) continue;
      const counts = new Map(update.bins.map((b) => [b.key, b.count]));
      const order = this.binOrder.get(view.view_id) ?? [];
      view.bins = order.map((key) => ({
        key,
        count: counts.get(key) ?? 0,
        highlighted: this.isHighlighted(view.view_id, key),
      }));
      view.last_latency_ms = latencyMs;
    }
    this.lastError = null;
    this.notify();
  }

  private isHighlighted(viewId: string, key: string): boolean {
    return this.brush !== null && this.brush.viewId === viewId && this.brush.binKeys.includes(key);
  }

  private markHighlights(): void {
    for (const view of this.views) {
      for (const bin of view.bins) {
        bin.highlighted = this.isHighlighted(view.view_id, bin.key);
      }
    }
    this.notify();
  }

  counts(viewId: string): Map<string, number> {
    return new Map(this.view(viewId).bins.map((b) => [b.key, b.count]));
  }

  originalCounts(viewId: string): Map<string, number> {
    return new Map(this.originals.get(viewId) ?? []);
  }

  badge(viewId: string): BadgeState {
    return badgeState(this.view(viewId).last_latency_ms);
  }
}
