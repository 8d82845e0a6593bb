"""
End-to-end runs on the reference synthetic benchmark (default config).

Slow: deselected by default, run with `pytest -m slow`.
"""

import numpy as np
import pytest

from flora.checkpoint import encode_checkpoint
from flora.config import RunConfig
from flora.evaluation import harmonic_mean
from flora.feature_pack import write_fpack
from flora.pipeline import evaluate_models, evaluation_items, load_inputs, predict_items, train_models
from flora.splits import write_split
from flora.synthetic import generate_synthetic, nearest_centroid_accuracy

pytestmark = pytest.mark.slow

SEEDS = (7, 8, 9)


@pytest.fixture(scope="module")
def reference(tmp_path_factory):
    root = tmp_path_factory.mktemp("reference")
    cfg = RunConfig.from_dict({
        "paths": {
            "skeleton_pack": str(root / "skeleton.fpack"),
            "semantic_pack": str(root / "semantic.fpack"),
            "split": str(root / "split.json"),
            "checkpoint_dir": str(root / "checkpoints"),
            "report_dir": str(root / "reports"),
        }
    })
    skeleton, semantic, split = generate_synthetic(cfg.synthetic)
    write_fpack(skeleton, cfg.paths.skeleton_pack)
    write_fpack(semantic, cfg.paths.semantic_pack)
    write_split(split, cfg.paths.split)
    return cfg, load_inputs(cfg)


@pytest.fixture(scope="module")
def reference_models(reference):
    cfg, inputs = reference
    return train_models(cfg, inputs)


def _zsl(cfg, inputs, models=None, classifier="flow"):
    models = models or train_models(cfg, inputs)
    return evaluate_models(cfg, models, inputs, "zsl", classifier).acc


def test_benchmark_is_separable(reference):
    _, inputs = reference
    assert nearest_centroid_accuracy(inputs.skeleton, inputs.split.all_class_ids) >= 0.95


def test_reference_zsl_accuracy(reference, reference_models):
    cfg, inputs = reference
    flow = _zsl(cfg, inputs, reference_models)
    similarity = _zsl(cfg, inputs, reference_models, "similarity")
    linear = _zsl(cfg, inputs, reference_models, "linear")
    assert flow >= 0.80
    assert flow >= similarity - 0.02
    assert abs(linear - similarity) <= 0.10


def test_gate_extremes_on_trained_models(reference, reference_models):
    cfg, inputs = reference
    items = evaluation_items(cfg, inputs, "gzsl")
    seen = inputs.split.seen_class_ids
    for gamma, want_seen in ((1e-300, False), (1e12, True)):
        point = cfg.with_overrides([f"predict.gamma={gamma!r}"])
        predictions = predict_items(point, reference_models, inputs, items, "gzsl", "flow")
        assert np.isin(predictions, seen).all() == want_seen
        assert np.isin(predictions, seen).any() == want_seen


def test_gzsl_report_is_consistent(reference, reference_models):
    cfg, inputs = reference
    report = evaluate_models(cfg, reference_models, inputs, "gzsl")
    assert report.harmonic == pytest.approx(harmonic_mean(report.seen, report.unseen), abs=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_small_timestep_is_not_worse(reference, seed):
    cfg, inputs = reference
    cfg = cfg.with_overrides([f"seed={seed}"])
    models = train_models(cfg, inputs)
    early = _zsl(cfg.with_overrides(["predict.t=0.1"]), inputs, models)
    late = _zsl(cfg.with_overrides(["predict.t=0.9"]), inputs, models)
    assert early >= late


@pytest.mark.parametrize("ablation,baseline", [
    (["align.reg_mode=\"geo\""], ["align.reg_mode=\"kl\""]),
    (["attune.k=5", "attune.tau=0.5"], ["attune.k=0"]),
])
def test_ablation_direction(reference, ablation, baseline):
    cfg, inputs = reference
    full, ablated = [], []
    for seed in SEEDS:
        seeded = cfg.with_overrides([f"seed={seed}"])
        full.append(_zsl(seeded.with_overrides(ablation), inputs))
        ablated.append(_zsl(seeded.with_overrides(baseline), inputs))
    assert np.mean(full) >= np.mean(ablated) - 0.01


def test_reruns_are_byte_identical(reference, reference_models):
    cfg, inputs = reference
    again = train_models(cfg, inputs)
    assert encode_checkpoint(again.pair.state_dict()) == encode_checkpoint(reference_models.pair.state_dict())
    assert encode_checkpoint(again.net.state_dict()) == encode_checkpoint(reference_models.net.state_dict())
    first = evaluate_models(cfg, reference_models, inputs, "gzsl").to_json()
    assert evaluate_models(cfg, again, inputs, "gzsl").to_json() == first
