import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import kddsynth  # noqa: E402
import oracles  # noqa: E402
from hybrid_ids.schema import FeatureDef, FeatureSchema, read_kdd  # noqa: E402

ACCEPTANCE_LINES = []

TRAIN_COUNTS = {"normal": 1500, "DoS": 400, "Probe": 150, "R2L": 60, "U2R": 20}
TEST_COUNTS = {"normal": 800, "DoS": 400, "Probe": 150, "R2L": 60, "U2R": 20}


def tiny_schema():
    """protocol (3 categories), land (binary), duration (10 bins)."""
    return FeatureSchema(
        features=(
            FeatureDef("protocol_type", "categorical", 2, categories=("tcp", "udp", "icmp")),
            FeatureDef("land", "binary", 7),
            FeatureDef("duration", "binned-integer", 1, bin_count=10,
                       bin_edges=tuple(x + 0.5 for x in range(9))),
        ),
        service_categories={"http": 3},
        attack_classes={"smurf": "DoS"},
    )


def oracle_layout(schema):
    return oracles.layout([(f.is_interval, f.legal_values) for f in schema.features])


def random_rows(schema, n, rng):
    cols = []
    for f in schema.features:
        legal = np.array(f.legal_values)
        cols.append(legal[rng.integers(0, len(legal), n)])
    return np.stack(cols, axis=1).astype(np.int16)


@pytest.fixture(scope="session")
def synth_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("kdd")
    train = kddsynth.write(d / "train.csv", TRAIN_COUNTS, seed=11)
    test = kddsynth.write(d / "test.csv", TEST_COUNTS, seed=12)
    return train, test


@pytest.fixture(scope="session")
def fitted_schema(synth_files):
    records, _ = read_kdd(synth_files[0])
    return FeatureSchema.default().fit(records)


@pytest.fixture(scope="session")
def synth_encoded(synth_files, fitted_schema):
    train, _ = read_kdd(synth_files[0])
    test, _ = read_kdd(synth_files[1])
    return fitted_schema.encode_many(train), fitted_schema.encode_many(test)


@pytest.fixture
def criterion(request):
    """Record one acceptance line per criterion for the terminal summary."""

    def record(number, title, passed, detail=""):
        # passed=None marks a criterion that could not run here
        status = "NOT RUN" if passed is None else ("PASS" if passed else "FAIL")
        ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {title}  {detail}".rstrip())
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
