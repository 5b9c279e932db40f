"""Review service over a real socket: queue, verdicts, durability, statics."""

import json
import threading

import httpx
import numpy as np
import pytest

from stackvet.datagen import SceneConfig, generate_dataset
from stackvet.service import ReviewState, build_queue_items, make_server
from stackvet.triage import HUMAN, TriagePolicy


POLICY = TriagePolicy(positive_threshold=0.8, negative_threshold=0.2)
SCENE = SceneConfig(noise_sigma=0.5, n_field_stars=(0, 0))


def _items(n=8, seed=0):
    samples = generate_dataset(n, 0.5, [32], SCENE, seed=seed)
    # Deterministic spread: two auto-accepts, two auto-rejects, rest human.
    scores = np.linspace(0.05, 0.95, n)
    return samples, build_queue_items(samples, scores, POLICY)


@pytest.fixture
def server(tmp_path):
    _, items = _items()
    state = ReviewState(items=items, policy=POLICY, verdict_path=str(tmp_path / "verdicts.ndjson"))
    srv = make_server(state, port=0)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{srv.server_address[1]}"
    try:
        with httpx.Client(base_url=base, timeout=5.0) as client:
            yield client, state, tmp_path
    finally:
        srv.shutdown()
        srv.server_close()


def test_health(server):
    client, _, _ = server
    r = client.get("/api/health")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert "version" in body


def test_queue_orders_most_ambiguous_first(server):
    client, state, _ = server
    r = client.get("/api/queue")
    assert r.status_code == 200
    items = r.json()["items"]
    assert len(items) == r.json()["pending"] == len(state.queue_order)
    mid = 0.5
    dists = [abs(i["score"] - mid) for i in items]
    assert dists == sorted(dists)
    assert all(i["bucket"] == HUMAN for i in items)
    # Every human item ships its pixel planes.
    assert all("channels" in i for i in items)

    r = client.get("/api/queue", params={"limit": 2})
    assert len(r.json()["items"]) == 2
    assert r.json()["pending"] == len(state.queue_order)
    assert client.get("/api/queue", params={"limit": "x"}).status_code == 400
    assert client.get("/api/queue", params={"limit": -1}).status_code == 400


def test_sample_payload_and_404(server):
    client, state, _ = server
    human_id = state.queue_order[0]["id"]
    r = client.get(f"/api/sample/{human_id}")
    assert r.status_code == 200
    body = r.json()
    assert body["id"] == human_id
    assert body["verdict"] is None
    chan = body["channels"][0]
    assert set(chan) >= {"depth", "group", "min", "max", "pixels"}
    assert len(chan["pixels"]) == 20
    assert len(chan["pixels"][0]) == 20

    assert client.get("/api/sample/nope").status_code == 404
    # Auto-routed samples are not reviewable.
    auto = next(i["id"] for i in state.items if i["bucket"] != HUMAN)
    assert client.get(f"/api/sample/{auto}").status_code == 404


def test_verdict_durable_log_and_supersede(server):
    client, state, tmp_path = server
    log = tmp_path / "verdicts.ndjson"
    first, second = state.queue_order[0]["id"], state.queue_order[1]["id"]

    r = client.post("/api/verdict", json={"id": first, "label": "object", "reviewer": "ada"})
    assert r.status_code == 200
    assert r.json() == {"ok": True, "id": first, "active_label": "object", "seq": 1}

    r = client.post("/api/verdict", json={"id": second, "label": "false_positive"})
    assert r.status_code == 200

    # Change of mind: a later record supersedes, the log keeps both lines.
    r = client.post("/api/verdict", json={"id": first, "label": "false_positive", "reviewer": "ada"})
    assert r.status_code == 200
    assert r.json()["seq"] == 3

    lines = [json.loads(l) for l in log.read_text().splitlines()]
    assert len(lines) == 3
    assert [l["seq"] for l in lines] == [1, 2, 3]
    assert all(set(l) == {"seq", "id", "label", "reviewer", "score", "timestamp"} for l in lines)

    r = client.get(f"/api/sample/{first}")
    assert r.json()["verdict"] == "false_positive"
    # Reviewed items drop out of the pending queue.
    pending_ids = [i["id"] for i in client.get("/api/queue").json()["items"]]
    assert first not in pending_ids and second not in pending_ids


def test_verdict_validation(server):
    client, state, _ = server
    human_id = state.queue_order[0]["id"]
    assert client.post("/api/verdict", json={"id": human_id, "label": "maybe"}).status_code == 400
    assert client.post("/api/verdict", json={"label": "object"}).status_code == 400
    assert client.post("/api/verdict", content=b"not json",
                       headers={"Content-Type": "application/json"}).status_code == 400
    assert client.post("/api/verdict", json={"id": "nope", "label": "object"}).status_code == 404
    auto = next(i["id"] for i in state.items if i["bucket"] != HUMAN)
    assert client.post("/api/verdict", json={"id": auto, "label": "object"}).status_code == 404


def test_unknown_endpoints(server):
    client, _, _ = server
    assert client.get("/api/widgets").status_code == 404
    assert client.post("/api/widgets", json={}).status_code == 404
    # No UI directory configured: anything outside /api/ is 404 too.
    assert client.get("/").status_code == 404


def test_stats_conservation(server):
    client, state, _ = server
    human_id = state.queue_order[0]["id"]
    before = client.get("/api/stats").json()
    assert before["human_reviewed"] == 0
    client.post("/api/verdict", json={"id": human_id, "label": "object"})
    after = client.get("/api/stats").json()
    for snap in (before, after):
        assert (
            snap["auto_positive"] + snap["auto_negative"]
            + snap["human_pending"] + snap["human_reviewed"]
            == snap["total"]
        )
    assert after["human_reviewed"] == 1
    assert after["human_pending"] == before["human_pending"] - 1
    assert after["policy"] == POLICY.to_dict()


def test_restart_replays_verdict_log(tmp_path):
    _, items = _items()
    path = str(tmp_path / "verdicts.ndjson")
    state = ReviewState(items=items, policy=POLICY, verdict_path=path)
    first = state.queue_order[0]["id"]
    second = state.queue_order[1]["id"]
    state.verdict(first, "object", "ada")
    state.verdict(second, "false_positive", "ada")
    state.verdict(first, "false_positive", "ada")

    # Fresh state over the same log: superseded labels win, seq continues.
    reborn = ReviewState(items=items, policy=POLICY, verdict_path=path)
    assert reborn.sample(first)["verdict"] == "false_positive"
    assert reborn.sample(second)["verdict"] == "false_positive"
    assert reborn.stats()["human_reviewed"] == 2
    result = reborn.verdict(second, "object")
    assert result["seq"] == 4


def test_build_queue_items_validates_lengths():
    samples, _ = _items(4)
    with pytest.raises(ValueError, match="one score per sample"):
        build_queue_items(samples, [0.5], POLICY)


def test_static_ui_serving(tmp_path):
    _, items = _items(4)
    ui = tmp_path / "ui"
    ui.mkdir()
    (ui / "index.html").write_text("<h1>review</h1>")
    (ui / "app.js").write_text("export {};")
    state = ReviewState(items=items, policy=POLICY, verdict_path=str(tmp_path / "v.ndjson"))
    srv = make_server(state, port=0, ui_dir=str(ui))
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{srv.server_address[1]}"
    try:
        with httpx.Client(base_url=base, timeout=5.0) as client:
            r = client.get("/")
            assert r.status_code == 200
            assert "review" in r.text
            assert r.headers["content-type"].startswith("text/html")
            r = client.get("/app.js")
            assert r.status_code == 200
            assert r.headers["content-type"].startswith("application/javascript")
            assert client.get("/missing.css").status_code == 404
            # Path traversal cannot escape the UI root.
            assert client.get("/../secrets.txt").status_code == 404
    finally:
        srv.shutdown()
        srv.server_close()


def test_concurrent_verdicts_serialize(server):
    client, state, tmp_path = server
    ids = [i["id"] for i in state.queue_order]
    errors = []

    def submit(sample_id):
        try:
            with httpx.Client(base_url=str(client.base_url), timeout=5.0) as c:
                r = c.post("/api/verdict", json={"id": sample_id, "label": "object"})
                assert r.status_code == 200
        except Exception as e:  # pragma: no cover - diagnostic path
            errors.append(e)

    threads = [threading.Thread(target=submit, args=(i,)) for i in ids]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    lines = (tmp_path / "verdicts.ndjson").read_text().splitlines()
    assert len(lines) == len(ids)
    seqs = sorted(json.loads(l)["seq"] for l in lines)
    assert seqs == list(range(1, len(ids) + 1))
    assert client.get("/api/stats").json()["human_pending"] == 0
