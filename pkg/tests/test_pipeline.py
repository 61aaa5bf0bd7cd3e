import json
from collections import Counter

import numpy as np
import pytest

import oracles
from conftest import oracle_layout, random_rows, tiny_schema
from hybrid_ids import pipeline
from hybrid_ids.detectors import UNSPECIFIED, Detector, DetectorSet, random_detector
from hybrid_ids.pipeline import (
    Verdict,
    analyze,
    detect,
    detect_matrix,
    evaluate,
    evaluate_overall,
    match_counts,
)
from hybrid_ids.schema import ConnectionVector, EncodedSet
from hybrid_ids.som import SomModel

U = UNSPECIFIED
TINY = tiny_schema()

# som vectors for the tiny schema: [tcp, udp, icmp, land, duration / 9]
FIXTURE_SOM = SomModel(
    2,
    [[0, 0, 1, 0, 0.5], [0, 1, 0, 0, 0.5], [1, 0, 0, 1, 0.5], [1, 0, 0, 0, 0.5]],
    ["DoS", "Probe", "U2R", "R2L"],
    TINY.digest,
)
# long connections, or any icmp
FIXTURE_DETECTORS = DetectorSet([Detector([U, U, 5, 9]), Detector([2, U, U, U])], TINY.digest)
FIXTURE_ROWS = [
    ((0, 0, 0), "normal"),
    ((0, 0, 1), "normal"),
    ((1, 0, 2), "normal"),
    ((0, 1, 6), "normal"),    # flagged: false positive, lands on U2R
    ((2, 0, 0), "DoS"),
    ((2, 0, 9), "DoS"),
    ((0, 0, 3), "DoS"),       # missed; SOM would call it R2L
    ((1, 0, 7), "Probe"),
    ((0, 1, 0), "U2R"),       # missed; SOM calls it U2R
    ((2, 0, 4), "zeroday"),   # unknown attack name, flagged
]


def fixture_set():
    values = np.array([r for r, _ in FIXTURE_ROWS], dtype=np.int16)
    labels = [lab for _, lab in FIXTURE_ROWS]
    return EncodedSet(values, labels, Counter({"zeroday": 1}))


class TestDetect:
    def test_empty_set_never_flags(self):
        rows = random_rows(TINY, 50, np.random.default_rng(0))
        empty = DetectorSet([], TINY.digest)
        assert not detect_matrix(empty, rows, TINY).any()
        assert not any(detect(empty, r, TINY) for r in rows.tolist())

    def test_or_of_matches_oracle(self):
        rng = np.random.default_rng(1)
        lay = oracle_layout(TINY)
        for _ in range(200):
            ds = DetectorSet([random_detector(TINY, rng) for _ in range(rng.integers(0, 6))], "x")
            rows = random_rows(TINY, 10, rng)
            expected_counts = [sum(oracles.match(d.genes, r, lay) for d in ds)
                               for r in rows.tolist()]
            assert match_counts(ds, rows, TINY, chunk=3).tolist() == expected_counts
            assert detect_matrix(ds, rows, TINY).tolist() == [c > 0 for c in expected_counts]
            assert [detect(ds, r, TINY) for r in rows.tolist()] == [c > 0 for c in expected_counts]


class TestAnalyze:
    def test_unflagged_never_reaches_som(self, monkeypatch):
        calls = []
        real = pipeline.find_winner
        monkeypatch.setattr(pipeline, "find_winner", lambda som, x: calls.append(1) or real(som, x))
        v = analyze(FIXTURE_DETECTORS, FIXTURE_SOM, ConnectionVector((0, 0, 0)), TINY)
        assert v == Verdict("normal") and calls == []
        v = analyze(FIXTURE_DETECTORS, FIXTURE_SOM, ConnectionVector((2, 0, 9)), TINY)
        assert len(calls) == 1
        assert v == Verdict("anomalous", "DoS", (0, 0), 2)

    def test_verdict_lines(self):
        assert Verdict("normal").line(4) == "4,normal,-,-,-"
        assert Verdict("anomalous", "Probe", (1, 0), 1).line(9) == "9,anomalous,Probe,1,0"

    def test_verdict_invariant(self):
        with pytest.raises(ValueError):
            Verdict("anomalous")
        with pytest.raises(ValueError):
            Verdict("normal", "DoS")


class TestEvaluate:
    def test_hand_counted_fixture(self):
        report = evaluate(FIXTURE_DETECTORS, FIXTURE_SOM, fixture_set(), TINY)
        assert report.detection == {"Normal": 0.75, "DoS": pytest.approx(2 / 3), "Probe": 1.0,
                                    "U2R": 0.0, "R2L": None}
        assert report.classification == {"DoS": pytest.approx(2 / 3), "Probe": 1.0, "U2R": 1.0,
                                         "R2L": None}
        assert report.overall == {"Normal": 0.75, "DoS": pytest.approx(4 / 9), "Probe": 1.0,
                                  "U2R": 0.0, "R2L": None}
        assert report.false_positive_rate == 0.25
        c = report.confusion
        assert c["normal"] == {"normal": 3, "DoS": 0, "Probe": 0, "U2R": 1, "R2L": 0}
        assert c["DoS"] == {"normal": 1, "DoS": 2, "Probe": 0, "U2R": 0, "R2L": 0}
        assert c["Probe"]["Probe"] == 1 and c["U2R"]["normal"] == 1
        assert c["unknown"] == {"normal": 0, "DoS": 1, "Probe": 0, "U2R": 0, "R2L": 0}
        assert report.counts["total"] == 10 and report.counts["unknown_flagged"] == 1
        assert report.unknown_attacks == {"zeroday": 1}

    def test_confusion_reconciles(self, synth_encoded, fitted_schema):
        rng = np.random.default_rng(2)
        ds = DetectorSet([random_detector(fitted_schema, rng) for _ in range(30)], "x")
        som = SomModel(3, rng.random((9, fitted_schema.som_dim)),
                       ["DoS", "Probe", "U2R", "R2L", "DoS", "Probe", "U2R", "R2L", "DoS"])
        test = synth_encoded[1]
        report = evaluate(ds, som, test, fitted_schema)
        for row, cols in report.confusion.items():
            assert sum(cols.values()) == report.counts[row]
        assert sum(report.counts[r] for r in pipeline.TRUE_ROWS) == len(test)
        assert report.detection["Normal"] + report.false_positive_rate == pytest.approx(1.0)
        flagged_normal = sum(v for k, v in report.confusion["normal"].items() if k != "normal")
        assert flagged_normal == round(report.false_positive_rate * report.counts["normal"])

    def test_overall_is_product(self):
        det = {"Normal": 0.994, "DoS": 0.969, "Probe": 0.8, "U2R": 0.5, "R2L": None}
        cls = {"DoS": 0.9992, "Probe": 0.5, "U2R": None, "R2L": 0.3}
        out = evaluate_overall(det, cls)
        assert out["Normal"] == 0.994
        assert out["DoS"] == pytest.approx(0.969 * 0.9992, abs=1e-12)
        assert out["Probe"] == pytest.approx(0.4)
        assert out["U2R"] is None and out["R2L"] is None

    def test_report_rendering_and_json(self):
        report = evaluate(FIXTURE_DETECTORS, FIXTURE_SOM, fixture_set(), TINY)
        report.provenance = {"labels": {"detection": "(0.6, 0.4)", "classification": "2-by-2"}}
        text = report.render()
        for heading in ["Anomaly detection performance", "Attack classification performance",
                        "Overall detection and classification", "Confusion matrix"]:
            assert heading in text
        assert "(0.6, 0.4)" in text and "2-by-2" in text
        assert "75.00%" in text and "n/a" in text
        assert "zeroday=1" in text
        doc = json.loads(report.dumps())
        assert doc["format_version"] == 1 and doc["counts"]["total"] == 10
