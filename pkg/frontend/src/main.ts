import { HttpApi } from "./api.js";
import { renderViews } from "./charts.js";
import { Dashboard } from "./state.js";

const DIMS = ["latlon_bin", "day_bin", "delay_bin", "carrier"];

function serverUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("server") ?? "http://127.0.0.1:8000";
}

async function boot(): Promise<void> {
  const root = document.getElementById("views")!;
  const status = document.getElementById("status")!;
  const dash = new Dashboard(new HttpApi(serverUrl()));
  dash.onChange(() => {
    renderViews(root, dash);
    status.textContent = dash.lastError
      ? `error: ${dash.lastError}`
      : `${dash.rowCount.toLocaleString()} rows · capture ${dash.captureMs.toFixed(0)} ms` +
        (dash.brush ? ` · brushed ${dash.brush.viewId}` : "");
  });
  document.getElementById("clear")!.addEventListener("click", () => void dash.clearBrush());
  status.textContent = "loading…";
  try {
    await dash.init({ params: { n: 100000, seed: 7 }, dims: DIMS, strategy: "btft" });
  } catch (err) {
    status.textContent = `failed to reach server at ${serverUrl()}: ${err}`;
  }
}

void boot();
