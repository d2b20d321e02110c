import pytest
from fastapi.testclient import TestClient

from smoke.server import create_app


@pytest.fixture()
def client():
    return TestClient(create_app())


def load_flights(client, n=20_000, session_id=None):
    body = {"generator": "flights", "params": {"n": n, "seed": 3}}
    if session_id:
        body["session_id"] = session_id
    r = client.post("/load", json=body)
    assert r.status_code == 200, r.text
    return r.json()


def test_load_flights_row_count(client):
    doc = load_flights(client, n=12_345)
    assert doc["row_count"] == 12_345
    assert "latency_ms" in doc


def test_load_zipf_empty(client):
    r = client.post("/load", json={"generator": "zipf", "params": {"n": 0}})
    assert r.status_code == 200
    assert r.json()["row_count"] == 0


def test_load_bad_generator_400(client):
    r = client.post("/load", json={"generator": "nope", "params": {}})
    assert r.status_code == 400


def test_duplicate_load_409(client):
    doc = load_flights(client)
    r = client.post("/load", json={"generator": "flights", "params": {"n": 10},
                                   "session_id": doc["session_id"]})
    assert r.status_code == 409


def test_views_counts_conserve(client):
    from smoke.relstore import FLIGHTS_DOMAINS

    doc = load_flights(client, n=5_000)
    r = client.post("/views", json={"session_id": doc["session_id"],
                                    "dims": ["latlon_bin", "day_bin", "delay_bin", "carrier"],
                                    "strategy": "bt_ft"})
    assert r.status_code == 200, r.text
    body = r.json()
    assert len(body["views"]) == 4
    for v in body["views"]:
        assert sum(b["count"] for b in v["bins"]) == 5_000
        assert len(v["bins"]) <= FLIGHTS_DOMAINS[v["view_id"]]
    assert body["capture_ms"] >= 0


def test_lazy_capture_cheaper_than_btft(client):
    lazy_ms = []
    btft_ms = []
    for strategy, sink in (("lazy", lazy_ms), ("btft", btft_ms)):
        for _ in range(3):
            doc = load_flights(client, n=50_000)
            body = client.post("/views", json={"session_id": doc["session_id"],
                                               "dims": ["latlon_bin", "day_bin", "delay_bin", "carrier"],
                                               "strategy": strategy}).json()
            sink.append(body["capture_ms"])
    # no index construction under lazy: capture is just the group-bys
    assert min(lazy_ms) < min(btft_ms)


def test_views_unknown_attr_400_and_double_409(client):
    doc = load_flights(client, n=1_000)
    r = client.post("/views", json={"session_id": doc["session_id"], "dims": ["nope"],
                                    "strategy": "bt"})
    assert r.status_code == 400
    ok = client.post("/views", json={"session_id": doc["session_id"], "dims": ["carrier"],
                                     "strategy": "bt"})
    assert ok.status_code == 200
    again = client.post("/views", json={"session_id": doc["session_id"], "dims": ["carrier"],
                                        "strategy": "bt"})
    assert again.status_code == 409


def _views_by_id(body):
    return {v["view_id"]: {b["key"]: b["count"] for b in v["bins"]} for v in body["views"]}


def test_brush_empty_selection_returns_originals(client):
    doc = load_flights(client, n=3_000)
    views = client.post("/views", json={"session_id": doc["session_id"],
                                        "dims": ["delay_bin", "carrier"],
                                        "strategy": "bt_ft"}).json()
    original = _views_by_id(views)
    r = client.post("/brush", json={"session_id": doc["session_id"], "view_id": "carrier",
                                    "bin_keys": []})
    assert r.status_code == 200
    assert _views_by_id(r.json()) == original


def test_brush_unknown_bin_400(client):
    doc = load_flights(client, n=1_000)
    client.post("/views", json={"session_id": doc["session_id"], "dims": ["carrier"],
                                "strategy": "bt"})
    r = client.post("/brush", json={"session_id": doc["session_id"], "view_id": "carrier",
                                    "bin_keys": ["99999"]})
    assert r.status_code == 400


def test_strategy_transparency_and_conservation(client):
    dims = ["latlon_bin", "day_bin", "delay_bin", "carrier"]
    responses = {}
    for strategy in ("lazy", "bt", "btft"):
        doc = load_flights(client, n=8_000)
        views = client.post("/views", json={"session_id": doc["session_id"], "dims": dims,
                                            "strategy": strategy}).json()
        carrier_keys = [b["key"] for b in views["views"][-1]["bins"]][:5]
        per_brush = {}
        for k in carrier_keys:
            r = client.post("/brush", json={"session_id": doc["session_id"],
                                            "view_id": "carrier", "bin_keys": [k]})
            body = r.json()
            per_brush[k] = _views_by_id(body)
            # count conservation: non-brushed views sum to the brushed subset size
            brushed_n = per_brush[k]["carrier"][k]
            for d in dims[:-1]:
                assert sum(per_brush[k][d].values()) == brushed_n
        responses[strategy] = per_brush
    assert responses["lazy"] == responses["bt"] == responses["btft"]


def test_brushed_view_returned_unchanged(client):
    doc = load_flights(client, n=2_000)
    views = client.post("/views", json={"session_id": doc["session_id"],
                                        "dims": ["delay_bin", "carrier"],
                                        "strategy": "bt_ft"}).json()
    original = _views_by_id(views)
    key = list(original["carrier"])[0]
    r = client.post("/brush", json={"session_id": doc["session_id"], "view_id": "carrier",
                                    "bin_keys": [key]})
    assert _views_by_id(r.json())["carrier"] == original["carrier"]
