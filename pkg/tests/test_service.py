import pytest
from fastapi.testclient import TestClient

from fresco.ledger import Ledger
from fresco.service import create_app

INFRA = {"cells": "synth:20/4", "clusters": 4, "traces": "synth:ratio=0.65", "seed": 3}


@pytest.fixture()
def client():
    return TestClient(create_app(Ledger()))


def test_health(client):
    assert client.get("/health").json() == {"status": "ok"}


def test_infra_build(client):
    r = client.post("/infra/build", json=INFRA)
    assert r.status_code == 200
    body = r.json()
    assert body["cells"] == 4 and body["nodes"] == {"cloud": 1, "edge": 20, "mobile": 1}
    bad = client.post("/infra/build", json={**INFRA, "traces": "synth:ratio=x"})
    assert bad.status_code == 422


def test_ledger_flow(client):
    assert client.post("/ledger/nodes", json={"node_id": 1}).status_code == 201
    assert client.post("/ledger/nodes", json={"node_id": 1}).status_code == 409
    assert client.get("/ledger").json()["gas_meter"] == 21_503
    r = client.post("/ledger/updates", json={"transactions": [{"measurement": 25, "node_id": 1}],
                                             "nabla": {"edge": 100}, "now": 0})
    assert r.json()["commit_time"] == 4000
    assert client.get("/ledger/nodes/1/reputation", params={"now": 3999}).json()["raw"] == 1_000_000
    assert client.get("/ledger/nodes/1/reputation", params={"now": 4000}).json()["raw"] == 925_000
    assert client.get("/ledger/nodes/9/reputation", params={"now": 0}).status_code == 404
    bad = client.post("/ledger/updates", json={"transactions": [{"measurement": 1, "node_id": 9}],
                                               "nabla": {"edge": 100}, "now": 0})
    assert bad.status_code == 422
    assert client.post("/ledger/resets", json={"node_ids": [1], "now": 5000}).status_code == 200
    assert client.delete("/ledger/nodes/1").json()["nodes"] == []


def test_experiment_and_report(client, tmp_path):
    spec = {"infra": INFRA, "apps": ["MOBIAR"], "engines": ["FRESCO"], "seeds": [1], "apps_per_run": 2}
    r = client.post("/experiments/run", json={"spec": spec, "out_dir": str(tmp_path)})
    assert r.status_code == 200 and r.json()["rows"][0]["apps"] == 2
    rep = client.post("/reports", json={"raw_dir": str(tmp_path), "format": "csv"})
    assert rep.json()["text"].startswith("engine,app")
    assert client.post("/reports", json={"raw_dir": str(tmp_path / "x")}).status_code == 422
    sw = client.post("/experiments/sweep", json={"spec": {**spec, "grid": [[1, 0, 0]]}, "out_dir": str(tmp_path / "s")})
    assert sw.status_code == 200 and len(sw.json()["rows"]) == 1
    assert client.post("/experiments/run", json={"spec": {"apps": ["X"]}, "out_dir": "o"}).status_code == 422
