import json

import pytest
from fastapi.testclient import TestClient

from guideqa.agreement import gwet_ac2
from guideqa.annosvc import ADVISORY, Assignment, RecordStore, build_app, build_assignments
from guideqa.corpus import QAPair
from guideqa.curation import SampledPair
from guideqa.judge import METRIC_IDS, METRICS, ScoreRecord, load_records
from guideqa.agreement import RaterMatrix


def make_pairs(n=10):
    pairs = {}
    for i in range(n):
        pid = f"vid01-single-q{i:04d}"
        pairs[pid] = QAPair(
            pair_id=pid,
            video_id="vid01",
            language="en",
            pipeline="single",
            question=f"Question {i}?",
            answer=f"Answer {i}.",
        )
    return pairs


def make_sample(pairs, raters=("anno-1", "anno-2", "anno-3")):
    return [
        SampledPair(
            pair_id=pid,
            language="en",
            video_id="vid01",
            pipeline="single",
            raters=list(raters),
        )
        for pid in sorted(pairs)
    ]


@pytest.fixture()
def service(tmp_path):
    pairs = make_pairs()
    sample = make_sample(pairs)
    store = RecordStore(tmp_path / "records.jsonl")
    app = build_app(build_assignments(sample), pairs, store)
    return TestClient(app), store, pairs


def scores(value=4):
    return {m: value for m in METRIC_IDS}


class TestNext:
    def test_fresh_annotator_gets_first_pair(self, service):
        client, _, pairs = service
        payload = client.get("/api/next", params={"annotator_id": "anno-1"}).json()
        assert payload["done"] is False
        assert payload["pair_id"] == sorted(pairs)[0]
        assert payload["index"] == 1
        assert payload["total"] == 10
        assert payload["advisory"] == ADVISORY

    def test_rubric_statements_match_metric_set(self, service):
        client, _, _ = service
        payload = client.get("/api/next", params={"annotator_id": "anno-1"}).json()
        served = [(m["id"], m["statement"], m["target"]) for m in payload["metrics"]]
        assert served == [(m.id, m.statement, m.target) for m in METRICS]

    def test_unknown_annotator(self, service):
        client, _, _ = service
        assert client.get("/api/next", params={"annotator_id": "ghost"}).status_code == 404

    def test_done_after_all_rated(self, service):
        client, _, pairs = service
        for pid in sorted(pairs):
            ok = client.post(
                "/api/rate",
                json={"annotator_id": "anno-1", "pair_id": pid, "scores": scores()},
            )
            assert ok.status_code == 200
        assert client.get("/api/next", params={"annotator_id": "anno-1"}).json()["done"] is True


class TestRate:
    def test_valid_submission_persists_seven(self, service):
        client, store, pairs = service
        pid = sorted(pairs)[0]
        resp = client.post(
            "/api/rate", json={"annotator_id": "anno-1", "pair_id": pid, "scores": scores()}
        )
        assert resp.status_code == 200
        assert resp.json()["records"] == 7
        persisted = load_records(store.path)
        assert len(persisted) == 7
        assert {r.metric for r in persisted} == set(METRIC_IDS)
        assert all(r.rater_kind == "human" for r in persisted)

    def test_duplicate_rejected_409(self, service):
        client, _, pairs = service
        pid = sorted(pairs)[0]
        body = {"annotator_id": "anno-1", "pair_id": pid, "scores": scores()}
        assert client.post("/api/rate", json=body).status_code == 200
        assert client.post("/api/rate", json=body).status_code == 409

    def test_out_of_range_422(self, service):
        client, store, pairs = service
        bad = scores()
        bad["q_fluency"] = 6
        resp = client.post(
            "/api/rate",
            json={"annotator_id": "anno-1", "pair_id": sorted(pairs)[0], "scores": bad},
        )
        assert resp.status_code == 422
        assert store.records == []

    def test_missing_metric_422(self, service):
        client, store, pairs = service
        partial = scores()
        del partial["a_mentorship"]
        resp = client.post(
            "/api/rate",
            json={"annotator_id": "anno-1", "pair_id": sorted(pairs)[0], "scores": partial},
        )
        assert resp.status_code == 422
        assert store.records == []

    def test_unassigned_pair_404(self, service):
        client, _, _ = service
        resp = client.post(
            "/api/rate",
            json={"annotator_id": "anno-1", "pair_id": "not-a-pair", "scores": scores()},
        )
        assert resp.status_code == 404

    def test_three_annotators_max_ratings(self, service):
        client, store, pairs = service
        pid = sorted(pairs)[0]
        for rater in ("anno-1", "anno-2", "anno-3"):
            body = {"annotator_id": rater, "pair_id": pid, "scores": scores()}
            assert client.post("/api/rate", json=body).status_code == 200
            assert client.post("/api/rate", json=body).status_code == 409
        per_pair = [r for r in store.records if r.pair_id == pid]
        assert len(per_pair) == 21  # 3 raters x 7 metrics


class TestProgress:
    def test_initial_zeros(self, service):
        client, _, _ = service
        progress = client.get("/api/progress").json()
        assert all(v["completed"] == 0 for v in progress["by_annotator"].values())
        assert progress["records"] == 0

    def test_counts_match_store_scan(self, service):
        client, store, pairs = service
        for pid in sorted(pairs)[:4]:
            client.post(
                "/api/rate", json={"annotator_id": "anno-2", "pair_id": pid, "scores": scores()}
            )
        progress = client.get("/api/progress").json()
        assert progress["by_annotator"]["anno-2"]["completed"] == 4
        assert progress["by_language"]["en"] == 4
        # Independent scan of the persisted file.
        lines = [json.loads(l) for l in store.path.read_text().splitlines() if l.strip()]
        assert len(lines) == progress["records"] == 28
        by_rater = {}
        for line in lines:
            key = (line["rater_id"], line["pair_id"])
            by_rater[key] = by_rater.get(key, 0) + 1
        assert sum(1 for k in by_rater if k[0] == "anno-2") == 4


class TestCrashSafety:
    def test_failure_before_write_persists_nothing(self, tmp_path):
        pairs = make_pairs(2)
        store = RecordStore(tmp_path / "records.jsonl")

        def explode(fh, blob):
            raise OSError("simulated crash before write")

        store._write = explode
        app = build_app(build_assignments(make_sample(pairs)), pairs, store)
        client = TestClient(app, raise_server_exceptions=False)
        resp = client.post(
            "/api/rate",
            json={"annotator_id": "anno-1", "pair_id": sorted(pairs)[0], "scores": scores()},
        )
        assert resp.status_code == 500
        reopened = RecordStore(tmp_path / "records.jsonl")
        assert reopened.records == []
        assert reopened.submitted == set()

    def test_torn_trailing_line_skipped_on_replay(self, tmp_path):
        path = tmp_path / "records.jsonl"
        good = ScoreRecord("p1", "q_fluency", "anno-1", "human", 4)
        path.write_text(good.to_json() + "\n" + '{"pair_id": "p2", "metr', encoding="utf-8")
        store = RecordStore(path)
        assert len(store.records) == 1
        assert store.records[0].pair_id == "p1"

    def test_replay_restores_progress(self, tmp_path):
        pairs = make_pairs(3)
        sample = make_sample(pairs)
        store = RecordStore(tmp_path / "records.jsonl")
        app = build_app(build_assignments(sample), pairs, store)
        client = TestClient(app)
        pid = sorted(pairs)[0]
        client.post("/api/rate", json={"annotator_id": "anno-1", "pair_id": pid, "scores": scores()})

        restarted = RecordStore(tmp_path / "records.jsonl")
        app2 = build_app(build_assignments(sample), pairs, restarted)
        client2 = TestClient(app2)
        nxt = client2.get("/api/next", params={"annotator_id": "anno-1"}).json()
        assert nxt["pair_id"] == sorted(pairs)[1]
        assert client2.get("/api/progress").json()["by_annotator"]["anno-1"]["completed"] == 1


class TestAgreementRoundTrip:
    def test_records_feed_rater_matrix(self, service):
        client, store, pairs = service
        chosen = sorted(pairs)[:5]
        for rater, offset in (("anno-1", 0), ("anno-2", 0), ("anno-3", 0)):
            for i, pid in enumerate(chosen):
                value = (i % 5) + 1
                client.post(
                    "/api/rate",
                    json={"annotator_id": rater, "pair_id": pid, "scores": scores(value)},
                )
        records = [r for r in load_records(store.path) if r.metric == "q_fluency"]
        by_item = {}
        for r in records:
            by_item.setdefault(r.pair_id, {})[r.rater_id] = r.score
        raters = ["anno-1", "anno-2", "anno-3"]
        m = RaterMatrix(
            items=chosen,
            raters=raters,
            ratings=[[by_item[p][r] for r in raters] for p in chosen],
        )
        assert gwet_ac2(m) == pytest.approx(1.0)
