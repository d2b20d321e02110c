// Typed client for the crossfilter server's three endpoints.

export interface Bin {
  key: string;
  count: number;
}

export interface ViewPayload {
  view_id: string;
  bins: Bin[];
}

export interface LoadResponse {
  session_id: string;
  row_count: number;
  columns: string[];
  latency_ms: number;
}

export interface ViewsResponse {
  views: ViewPayload[];
  capture_ms: number;
  strategy: string;
  latency_ms: number;
}

export interface BrushResponse {
  views: ViewPayload[];
  latency_ms: number;
}

export interface Api {
  load(generator: string, params: Record<string, unknown>): Promise<LoadResponse>;
  views(sessionId: string, dims: string[], strategy: string): Promise<ViewsResponse>;
  brush(sessionId: string, viewId: string, binKeys: string[]): Promise<BrushResponse>;
}

async function post<T>(url: string, body: unknown): Promise<T> {
  const resp = await fetch(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!resp.ok) {
    const text = await resp.text();
    throw new Error(`${url} failed (${resp.status}): ${text}`);
  }
  return (await resp.json()) as T;
}

export class HttpApi implements Api {
  constructor(private baseUrl: string) {}

  load(generator: string, params: Record<string, unknown>): Promise<LoadResponse> {
    return post(`${this.baseUrl}/load`, { generator, params });
  }

  views(sessionId: string, dims: string[], strategy: string): Promise<ViewsResponse> {
    return post(`${this.baseUrl}/views`, { session_id: sessionId, dims, strategy });
  }

  brush(sessionId: string, viewId: string, binKeys: string[]): Promise<BrushResponse> {
    return post(`${this.baseUrl}/brush`, {
      session_id: sessionId,
      view_id: viewId,
      bin_keys: binKeys,
    });
  }
}
