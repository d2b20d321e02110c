// Bar-chart rendering. Wide dimensions (the lat/lon bins) are shown as a
// top-K bar list; brushing still addresses bins by key.

import type { Dashboard, ViewModel } from "./state.js";
import { badgeState } from "./state.js";

const TOP_K = 40;

export function renderViews(root: HTMLElement, dash: Dashboard): void {
  root.innerHTML = "";
  if (dash.views.length === 0) {
    const empty = document.createElement("p");
    empty.className = "empty-state";
    empty.textContent = "No views loaded yet.";
    root.appendChild(empty);
    return;
  }
  for (const view of dash.views) {
    root.appendChild(renderView(view, dash));
  }
}

function renderView(view: ViewModel, dash: Dashboard): HTMLElement {
  const card = document.createElement("div");
  card.className = "view-card";

  const header = document.createElement("div");
  header.className = "view-header";
  const title = document.createElement("h3");
  title.textContent = view.view_id;
  header.appendChild(title);
  header.appendChild(latencyBadge(view));
  card.appendChild(header);

  const shown = visibleBins(view);
  const maxCount = Math.max(1, ...shown.map((b) => b.count));
  const bars = document.createElement("div");
  bars.className = "bars";
  for (const bin of shown) {
    const row = document.createElement("div");
    row.className = "bar-row" + (bin.highlighted ? " brushed" : "");
    row.dataset.key = bin.key;

    const label = document.createElement("span");
    label.className = "bar-label";
    label.textContent = bin.key;

    const track = document.createElement("div");
    track.className = "bar-track";
    const fill = document.createElement("div");
    fill.className = "bar-fill";
    fill.style.width = `${(100 * bin.count) / maxCount}%`;
    track.appendChild(fill);

    const count = document.createElement("span");
    count.className = "bar-count";
    count.textContent = String(bin.count);

    row.append(label, track, count);
    row.addEventListener("click", () => {
      const already = dash.brush?.viewId === view.view_id && dash.brush.binKeys.includes(bin.key);
      void dash.brushBins(view.view_id, already ? [] : [bin.key]);
    });
    bars.appendChild(row);
  }
  card.appendChild(bars);

  if (view.bins.length > shown.length) {
    const note = document.createElement("p");
    note.className = "truncated-note";
    note.textContent = `showing top ${shown.length} of ${view.bins.length} bins`;
    card.appendChild(note);
  }
  return card;
}

function visibleBins(view: ViewModel) {
  if (view.bins.length <= TOP_K) return view.bins;
  // keep brushed bins visible even when they fall outside the top K
  const top = [...view.bins].sort((a, b) => b.count - a.count).slice(0, TOP_K);
  for (const bin of view.bins) {
    if (bin.highlighted && !top.includes(bin)) top.push(bin);
  }
  return top;
}

function latencyBadge(view: ViewModel): HTMLElement {
  const badge = document.createElement("span");
  const state = badgeState(view.last_latency_ms);
  badge.className = `latency-badge ${state}`;
  badge.textContent =
    view.last_latency_ms === null ? "–" : `${view.last_latency_ms.toFixed(1)} ms`;
  return badge;
}
