"""HTTP façade for the crossfilter UI: load data, register count views with
a capture strategy, and brush bins.

Responses all carry a server-side latency_ms.  Within a session requests
are serialized; distinct sessions are independent.
"""

from __future__ import annotations

import threading
import time
import uuid
from typing import Dict, List, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .bench.xfilter import CrossfilterState, brush as brush_views, build_views
from .relstore import Relation, Schema, gen_flights, gen_zipf, load_csv

STRATEGY_ALIASES = {
    "lazy": "lazy",
    "bt": "bt",
    "bt_ft": "bt_ft",
    "btft": "bt_ft",
    "bt+ft": "bt_ft",
}


class LoadRequest(BaseModel):
    generator: str
    params: Dict[str, object] = Field(default_factory=dict)
    session_id: Optional[str] = None


class ViewsRequest(BaseModel):
    session_id: str
    dims: List[str]
    strategy: str = "bt_ft"


class BrushRequest(BaseModel):
    session_id: str
    view_id: str
    bin_keys: List[str] = Field(default_factory=list)


class _SessionState:
    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.table: Optional[Relation] = None
        self.xstate: Optional[CrossfilterState] = None
        self.key_pos: Dict[str, Dict[str, int]] = {}


def _bins_payload(dim: str, bins: np.ndarray, counts: np.ndarray) -> dict:
    return {
        "view_id": dim,
        "bins": [{"key": str(k), "count": int(c)} for k, c in zip(bins.tolist(), counts.tolist())],
    }


def create_app() -> FastAPI:
    app = FastAPI(title="lineage crossfilter server")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    sessions: Dict[str, _SessionState] = {}
    registry_lock = threading.Lock()

    def get_session(session_id: str) -> _SessionState:
        with registry_lock:
            if session_id not in sessions:
                raise HTTPException(404, f"unknown session {session_id!r}")
            return sessions[session_id]

    @app.post("/load")
    def load(req: LoadRequest):
        t0 = time.perf_counter()
        if req.session_id is not None:
            state = get_session(req.session_id)
            with state.lock:
                if state.table is not None:
                    raise HTTPException(409, "session already has a dataset")
            session_id = req.session_id
        else:
            session_id = uuid.uuid4().hex[:12]
            with registry_lock:
                sessions[session_id] = _SessionState()
            state = sessions[session_id]
        p = dict(req.params)
        try:
            if req.generator == "flights":
                table = gen_flights(int(float(p.get("n", 100_000))), seed=int(p.get("seed", 7)))
            elif req.generator == "zipf":
                table = gen_zipf(int(float(p.get("n", 100_000))), int(p.get("g", 100)),
                                 float(p.get("theta", 1.0)), seed=int(p.get("seed", 7)))
            elif req.generator == "csv":
                schema = Schema(tuple((c[0], c[1]) for c in p["schema"]))
                table = load_csv(p["path"], schema, delimiter=p.get("delimiter", ","), name="csv")
            else:
                raise HTTPException(400, f"unknown generator {req.generator!r}")
        except HTTPException:
            raise
        except Exception as e:
            raise HTTPException(400, f"bad load parameters: {e}")
        with state.lock:
            if state.table is not None:
                raise HTTPException(409, "session already has a dataset")
            state.table = table
        return {
            "session_id": session_id,
            "row_count": len(table),
            "columns": list(table.schema.names),
            "latency_ms": (time.perf_counter() - t0) * 1e3,
        }

    @app.post("/views")
    def views(req: ViewsRequest):
        t0 = time.perf_counter()
        state = get_session(req.session_id)
        strategy = STRATEGY_ALIASES.get(req.strategy.lower().replace("-", "_"))
        if strategy is None:
            raise HTTPException(400, f"unknown strategy {req.strategy!r}")
        with state.lock:
            if state.table is None:
                raise HTTPException(400, "no dataset loaded")
            if state.xstate is not None:
                raise HTTPException(409, "views already registered for this session")
            for d in req.dims:
                if d not in state.table.schema:
                    raise HTTPException(400, f"unknown attribute {d!r}")
            state.xstate = build_views(state.table, req.dims, strategy)
            state.key_pos = {
                d: {str(k): i for i, k in enumerate(v.bins.tolist())}
                for d, v in state.xstate.views.items()
            }
            payload = [_bins_payload(d, v.bins, v.counts) for d, v in state.xstate.views.items()]
            return {
                "views": payload,
                "capture_ms": state.xstate.capture_ms,
                "strategy": strategy,
                "latency_ms": (time.perf_counter() - t0) * 1e3,
            }

    @app.post("/brush")
    def do_brush(req: BrushRequest):
        t0 = time.perf_counter()
        state = get_session(req.session_id)
        with state.lock:
            if state.xstate is None:
                raise HTTPException(400, "no views registered")
            if req.view_id not in state.xstate.views:
                raise HTTPException(400, f"unknown view {req.view_id!r}")
            if not req.bin_keys:
                # empty selection clears the filter
                payload = [_bins_payload(d, v.bins, v.counts) for d, v in state.xstate.views.items()]
                return {"views": payload, "latency_ms": (time.perf_counter() - t0) * 1e3}
            positions = []
            keymap = state.key_pos[req.view_id]
            for k in req.bin_keys:
                if str(k) not in keymap:
                    raise HTTPException(400, f"unknown bin {k!r} in view {req.view_id!r}")
                positions.append(keymap[str(k)])
            counts = brush_views(state.xstate, req.view_id, positions)
            payload = [
                _bins_payload(d, state.xstate.views[d].bins, counts[d])
                for d in state.xstate.views
            ]
            return {"views": payload, "latency_ms": (time.perf_counter() - t0) * 1e3}

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    return app


def serve(host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(create_app(), host=host, port=port, log_level="warning")
