import json

import pytest
from pydantic import ValidationError

from flora.errors import ShapeError, SplitRangeError
from flora.evaluation import EvalReport, evaluate, harmonic_mean, render_table
from flora.splits import make_split


@pytest.mark.parametrize("seen,unseen,expected", [(77.7, 75.6, "76.6"), (66.9, 49.0, "56.6")])
def test_published_harmonic_means(seen, unseen, expected):
    assert f"{harmonic_mean(seen, unseen):.1f}" == expected
    assert f"{100 * harmonic_mean(seen / 100, unseen / 100):.1f}" == expected


def test_harmonic_edges():
    assert harmonic_mean(0.4, 0.4) == pytest.approx(0.4)
    assert harmonic_mean(0.9, 0.0) == 0.0
    assert harmonic_mean(0.0, 0.0) == 0.0


@pytest.fixture
def split():
    return make_split([3, 4], 5)


def test_zsl_accuracy(split):
    report = evaluate([3, 4, 4, 3], [3, 4, 3, 3], split, "zsl", seed=7)
    assert report.acc == 0.75
    assert report.seen is None and report.harmonic is None
    assert report.per_class == pytest.approx({"3": 2 / 3, "4": 1.0})
    assert report.confusion == {"3": {"3": 2, "4": 1}, "4": {"4": 1}}
    assert report.headline == 0.75
    assert report.seed == 7


def test_gzsl_scores(split):
    report = evaluate([0, 1, 1, 3, 0], [0, 1, 2, 3, 4], split, "gzsl")
    assert report.seen == pytest.approx(2 / 3)
    assert report.unseen == 0.5
    assert report.harmonic == pytest.approx(harmonic_mean(2 / 3, 0.5))
    assert report.acc is None


def test_gzsl_with_no_unseen_hits(split):
    report = evaluate([0, 1, 0], [0, 1, 3], split, "gzsl")
    assert report.unseen == 0.0
    assert report.harmonic == 0.0


def test_length_mismatch(split):
    with pytest.raises(ShapeError):
        evaluate([3, 4], [3], split, "zsl")


def test_seen_label_under_zsl(split):
    with pytest.raises(SplitRangeError):
        evaluate([3], [0], split, "zsl")
    with pytest.raises(SplitRangeError):
        evaluate([3], [9], split, "gzsl")


def test_inconsistent_harmonic_is_rejected():
    with pytest.raises(ValidationError):
        EvalReport(protocol="gzsl", n_items=2, seen=0.5, unseen=0.5, harmonic=0.4)
    with pytest.raises(ValidationError):
        EvalReport(protocol="zsl", n_items=2)


def test_json_is_stable(tmp_path, split):
    config = {"b": 1, "a": {"z": 2, "y": 3}}
    first = evaluate([3, 4], [3, 4], split, "zsl", config=config, seed=1).write(tmp_path / "a.json")
    second = evaluate([3, 4], [3, 4], split, "zsl", config=config, seed=1).write(tmp_path / "b.json")
    assert first.read_bytes() == second.read_bytes()
    document = json.loads(first.read_text())
    assert list(document) == sorted(document)
    assert EvalReport.model_validate(document).acc == 1.0


def test_table(split):
    zsl = evaluate([3, 4, 4], [3, 4, 3], split, "zsl")
    gzsl = evaluate([0, 3], [0, 4], split, "gzsl", classifier="similarity")
    lines = render_table([zsl, gzsl]).splitlines()
    assert lines[0].split() == ["classifier", "protocol", "Acc", "S", "U", "H"]
    assert lines[1].split() == ["flow", "zsl", "66.7", "-", "-", "-"]
    assert lines[2].split() == ["similarity", "gzsl", "-", "100.0", "0.0", "0.0"]
