"""Session: catalog plus registered query results addressable by handle.

Every executed base query gets a handle so later lineage and lineage-
consuming queries can reference it.  The session is also the integration
point the SQL lineage table functions call back into.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from ..operators import CaptureMode
from ..relstore import Relation
from .logical import Catalog, PlanError
from .parser import parse_sql
from .physical import Executor, PhysicalPlan, QueryResult, lower


class NoIndexError(Exception):
    """Requested lineage direction/relation was not captured for the handle."""


class Session:
    def __init__(self) -> None:
        self.catalog = Catalog()
        self.results: Dict[str, QueryResult] = {}
        self._counter = 0
        self.executor = Executor(self.catalog, session=self)

    # -- catalog
    def add_relation(self, rel: Relation, name: Optional[str] = None, primary_key: Optional[str] = None) -> None:
        self.catalog.add(rel, name, primary_key)

    def relation(self, name: str) -> Relation:
        return self.catalog.get(name)

    # -- queries
    def plan(self, text: str, mode: CaptureMode = CaptureMode.INJECT, workload=None) -> PhysicalPlan:
        lp = parse_sql(text)
        pp = lower(lp, self.catalog, mode, workload, session=self)
        pp.text = text
        return pp

    def sql(self, text: str, mode: CaptureMode = CaptureMode.INJECT, workload=None,
            params: Optional[dict] = None, handle: Optional[str] = None) -> QueryResult:
        pp = self.plan(text, mode, workload)
        res = self.executor.execute(pp, params)
        res.sql_text = text
        return self.register(res, handle)

    def execute_plan(self, pp: PhysicalPlan, params: Optional[dict] = None,
                     handle: Optional[str] = None) -> QueryResult:
        res = self.executor.execute(pp, params)
        res.sql_text = pp.text
        return self.register(res, handle)

    def register(self, res: QueryResult, handle: Optional[str] = None) -> QueryResult:
        if handle is None:
            self._counter += 1
            handle = f"q{self._counter}"
        res.handle = handle
        self.results[handle] = res
        return res

    def result(self, handle: str) -> QueryResult:
        if handle not in self.results:
            raise PlanError(f"unknown result handle {handle!r}")
        return self.results[handle]

    # -- lineage plumbing used by the executor's table functions
    def _pair(self, handle: str, base: str):
        res = self.result(handle)
        if res.bundle is None:
            raise NoIndexError(f"no lineage captured for {handle!r}")
        res.bundle.finalize()
        if base not in res.bundle.pairs:
            raise NoIndexError(f"handle {handle!r} has no lineage for relation {base!r}")
        return res.bundle.pairs[base]

    def backward_rids(self, handle: str, out_rids: np.ndarray, base: str) -> np.ndarray:
        """Deduplicated (stable order) base rids contributing to out_rids."""
        pair = self._pair(handle, base)
        n_out = len(self.result(handle).output)
        bad = [int(r) for r in out_rids if not 0 <= int(r) < n_out]
        if bad:
            raise PlanError(f"output rid(s) {bad} out of range for {handle!r}")
        if pair.backward is not None:
            vals = pair.backward.gather(np.asarray(out_rids, dtype=np.int64))
        elif pair.partitioned_backward is not None:
            parts = [pair.partitioned_backward.get_all(int(o)) for o in out_rids]
            vals = np.concatenate(parts) if parts else np.empty(0, np.uint32)
        else:
            raise NoIndexError(f"backward lineage pruned for {base!r} on {handle!r}")
        return _stable_unique(vals)

    def forward_rids(self, handle: str, in_rids: np.ndarray, base: Optional[str]) -> np.ndarray:
        res = self.result(handle)
        if base is None:
            if res.bundle is None or len(res.bundle.pairs) != 1:
                raise PlanError("forward(...) needs a base relation name for multi-relation queries")
            base = next(iter(res.bundle.pairs))
        pair = self._pair(handle, base)
        if pair.forward is None:
            raise NoIndexError(f"forward lineage pruned for {base!r} on {handle!r}")
        n_base = len(self.catalog.get(base)) if not base.startswith("@") else len(self.result(base[1:]).output)
        bad = [int(r) for r in in_rids if not 0 <= int(r) < n_base]
        if bad:
            raise PlanError(f"input rid(s) {bad} out of range for {base!r}")
        vals = pair.forward.gather(np.asarray(in_rids, dtype=np.int64))
        return _stable_unique(vals)


def _stable_unique(vals: np.ndarray) -> np.ndarray:
    if len(vals) == 0:
        return np.empty(0, dtype=np.int64)
    v = vals.astype(np.int64)
    _, first = np.unique(v, return_index=True)
    return v[np.sort(first)]
