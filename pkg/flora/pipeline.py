"""
Two-stage pipeline
==================

    attune semantics → train dual VAE (seen only) → freeze →
    train flow on mean-mode latents → evaluate (flow | similarity | linear)

Every stage draws from its own child stream of Rng(cfg.seed), so a run is a
pure function of (config, input files).
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from flora.baselines import baseline_linear, similarity_predictions
from flora.checkpoint import load_checkpoint, save_checkpoint
from flora.config import RunConfig
from flora.core.rng import Rng
from flora.cross_modal_vae import AlignTraceRow, VaePair, semantic_latents, skeleton_latents, train_align, write_align_trace
from flora.errors import ConfigError, DataError, MissingInputError
from flora.evaluation import EvalReport, evaluate
from flora.feature_pack import FeaturePack, PackKind, read_fpack
from flora.flow_classifier import flow_predictions
from flora.flow_matching import FlowNet, FlowTraceRow, train_flow, write_flow_trace
from flora.semantic_attunement import attune_pack
from flora.splits import BUNDLED_SPLITS, SplitSpec, load_split
from flora.synthetic import partition_samples

logger = logging.getLogger("flora")

VAE_CHECKPOINT = "vae.ckpt"
FLOW_CHECKPOINT = "flow.ckpt"


@dataclass
class Inputs:
    skeleton: FeaturePack
    semantic: FeaturePack
    split: SplitSpec


@dataclass
class TrainedModels:
    pair: VaePair
    net: FlowNet
    attuned: FeaturePack
    align_trace: List[AlignTraceRow] = field(default_factory=list)
    flow_trace: List[FlowTraceRow] = field(default_factory=list)


def check_inputs(skeleton: FeaturePack, semantic: FeaturePack, split: SplitSpec) -> Inputs:
    if skeleton.kind is not PackKind.SKELETON:
        raise DataError("skeleton pack has the semantic kind")
    if semantic.kind is not PackKind.SEMANTIC:
        raise DataError("semantic pack has the skeleton kind")
    if skeleton.n_tokens != 1:
        raise DataError(f"skeleton items must have M=1, got M={skeleton.n_tokens}")
    if semantic.n_items < split.n_classes:
        raise DataError(f"split covers {split.n_classes} classes but the semantic pack has {semantic.n_items}")
    if skeleton.n_items and int(skeleton.labels.max()) >= split.n_classes:
        raise DataError(f"skeleton label {int(skeleton.labels.max())} outside the split's {split.n_classes} classes")
    return Inputs(skeleton, semantic, split)


def load_inputs(cfg: RunConfig) -> Inputs:
    """Read the two packs and the split named in cfg.paths"""
    paths = cfg.paths
    for label, path in (("skeleton pack", paths.skeleton_pack), ("semantic pack", paths.semantic_pack), ("split", paths.split)):
        if not Path(path).exists() and not (label == "split" and path in BUNDLED_SPLITS):
            raise MissingInputError(f"{label} not found: {path}")
    inputs = check_inputs(read_fpack(paths.skeleton_pack), read_fpack(paths.semantic_pack), load_split(paths.split))
    logger.info(
        f"📂 Inputs: {inputs.skeleton.n_items} skeleton items (d_s={inputs.skeleton.dim}), "
        f"{inputs.semantic.n_items} classes × {inputs.semantic.n_tokens} tokens (d_a={inputs.semantic.dim})"
    )
    return inputs


def attuned_semantics(cfg: RunConfig, semantic: FeaturePack) -> FeaturePack:
    """Attunement runs over every class; neighbours may be unseen classes"""
    a = cfg.attune
    return attune_pack(semantic, a.k, a.tau, a.pooling, a.tokens)


def build_models(cfg: RunConfig, d_s: int, d_a: int) -> Tuple[VaePair, FlowNet]:
    root = Rng(cfg.seed)
    pair = VaePair.from_config(d_s, d_a, cfg.align, root.child("align_init"))
    net = FlowNet(cfg.align.latent_dim, cfg.flow, root.child("flow_init"))
    return pair, net


def train_models(cfg: RunConfig, inputs: Inputs) -> TrainedModels:
    """Stage 1 then stage 2; the VAE pair is frozen in between"""
    root = Rng(cfg.seed)
    attuned = attuned_semantics(cfg, inputs.semantic)
    train_idx, _, _ = partition_samples(inputs.skeleton, inputs.split, cfg.data)
    pair, net = build_models(cfg, inputs.skeleton.dim, attuned.dim)

    pair, align_trace = train_align(pair, inputs.skeleton, attuned, inputs.split, cfg.align, root.child("align"), train_idx)
    pair.freeze()
    net, flow_trace = train_flow(net, pair, inputs.skeleton, attuned, inputs.split, cfg.flow, root.child("flow"), train_idx)
    return TrainedModels(pair, net, attuned, align_trace, flow_trace)


def save_models(cfg: RunConfig, models: TrainedModels) -> Dict[str, Path]:
    ckpt = Path(cfg.paths.checkpoint_dir)
    return {
        "vae": save_checkpoint(models.pair, ckpt / VAE_CHECKPOINT),
        "flow": save_checkpoint(models.net, ckpt / FLOW_CHECKPOINT),
        "align_trace": write_align_trace(models.align_trace, ckpt / "align_trace.csv"),
        "flow_trace": write_flow_trace(models.flow_trace, ckpt / "flow_trace.csv"),
    }


def load_models(cfg: RunConfig, inputs: Inputs) -> TrainedModels:
    """Rebuild the architecture from cfg and load both checkpoints"""
    attuned = attuned_semantics(cfg, inputs.semantic)
    pair, net = build_models(cfg, inputs.skeleton.dim, attuned.dim)
    ckpt = Path(cfg.paths.checkpoint_dir)
    load_checkpoint(pair, ckpt / VAE_CHECKPOINT)
    load_checkpoint(net, ckpt / FLOW_CHECKPOINT)
    pair.freeze()
    net.set_requires_grad(False)
    return TrainedModels(pair, net, attuned)


def evaluation_items(cfg: RunConfig, inputs: Inputs, protocol: str) -> np.ndarray:
    """D_te^u for ZSL, D_te^s ∪ D_te^u for GZSL"""
    _, seen_test, unseen_test = partition_samples(inputs.skeleton, inputs.split, cfg.data)
    if protocol == "zsl":
        return unseen_test
    if protocol == "gzsl":
        return np.concatenate([seen_test, unseen_test])
    raise ConfigError(f"unknown protocol: {protocol}")


def predict_items(cfg: RunConfig, models: TrainedModels, inputs: Inputs, items: np.ndarray,
                  protocol: str, classifier: str) -> np.ndarray:
    split = inputs.split
    candidates = np.asarray(split.unseen_class_ids if protocol == "zsl" else split.all_class_ids, dtype=np.int64)
    features = inputs.skeleton.features[items]

    if classifier == "linear":
        linear = baseline_linear(models.pair, models.attuned, candidates, Rng(cfg.seed).child("linear"), cfg.predict)
        return linear.predict(features[:, 0, :])

    z_s = skeleton_latents(models.pair, features, models.attuned.n_tokens)
    class_latents = semantic_latents(models.pair, models.attuned)
    if classifier == "similarity":
        return similarity_predictions(z_s, class_latents[candidates], candidates)
    if classifier == "flow":
        return flow_predictions(
            models.net, z_s, class_latents, candidates, cfg.predict, protocol,
            seen_ids=split.seen_class_ids, sigma_min=cfg.flow.sigma_min, direction=cfg.flow.direction,
            source=cfg.flow.source,
        )
    raise ConfigError(f"unknown classifier: {classifier}")


def evaluate_models(cfg: RunConfig, models: TrainedModels, inputs: Inputs, protocol: str = "zsl",
                    classifier: str = "flow") -> EvalReport:
    items = evaluation_items(cfg, inputs, protocol)
    if items.size == 0:
        raise DataError(f"no {protocol} test items")
    logger.info(f"🔎 Evaluating {classifier} ({protocol}) on {items.size} test items")
    predictions = predict_items(cfg, models, inputs, items, protocol, classifier)
    labels = inputs.skeleton.labels[items].astype(np.int64)
    return evaluate(predictions, labels, inputs.split, protocol, classifier, cfg.echo(), cfg.seed)


def report_path(cfg: RunConfig, protocol: str, classifier: str) -> Path:
    return Path(cfg.paths.report_dir) / f"eval_{protocol}_{classifier}.json"


def run_experiment(cfg: RunConfig, inputs: Inputs, protocol: str = "zsl", classifier: str = "flow",
                   models: Optional[TrainedModels] = None) -> EvalReport:
    """Train (unless `models` is given) and evaluate in one go"""
    models = models or train_models(cfg, inputs)
    return evaluate_models(cfg, models, inputs, protocol, classifier)


# ============= SWEEPS =============

SWEEP_AXES: Dict[str, str] = {
    "t": "predict.t",
    "k": "attune.k",
    "tau": "attune.tau",
    "gamma": "predict.gamma",
    "alpha": "predict.alpha",
    "lambda_align": "align.lambda_align",
    "lambda_flow": "flow.lambda_flow",
    "tokens": "attune.tokens",
    "train_fraction": "data.train_fraction",
}
AXIS_ALIASES = {"τ": "tau", "γ": "gamma", "α": "alpha", "λ_Align": "lambda_align", "λ_Flow": "lambda_flow"}
# axes read only at prediction time; one training run serves every value
INFERENCE_AXES = ("t", "gamma", "alpha")


def sweep_axis(axis: str) -> str:
    """Canonical axis name; raises ConfigError for unknown axes"""
    name = AXIS_ALIASES.get(axis, axis)
    if name not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis '{axis}' (known: {', '.join(SWEEP_AXES)})")
    return name


def sweep_config(cfg: RunConfig, axis: str, value) -> RunConfig:
    return cfg.with_overrides([f"{SWEEP_AXES[sweep_axis(axis)]}={json.dumps(value)}"])


def _sweep_record(axis: str, value, protocol: str, classifier: str, report: EvalReport) -> Dict:
    return {
        "axis": sweep_axis(axis),
        "value": value,
        "protocol": protocol,
        "classifier": classifier,
        "acc": report.acc,
        "S": report.seen,
        "U": report.unseen,
        "H": report.harmonic,
    }


def sweep_row(cfg: RunConfig, axis: str, value, protocol: str, classifier: str) -> Dict:
    """One CSV row: retrain and evaluate with `axis` set to `value`"""
    point = sweep_config(cfg, axis, value)
    report = run_experiment(point, load_inputs(point), protocol, classifier)
    return _sweep_record(axis, value, protocol, classifier, report)


def sweep_rows(cfg: RunConfig, axis: str, values: Sequence, protocol: str, classifier: str) -> List[Dict]:
    """
    Rows for every value of `axis`

    Inference-only axes (t, γ, α) train once on `cfg` and re-evaluate the
    same models per value; every other axis retrains per value.
    """
    axis = sweep_axis(axis)
    if axis not in INFERENCE_AXES:
        return [sweep_row(cfg, axis, value, protocol, classifier) for value in values]
    points = [sweep_config(cfg, axis, value) for value in values]
    inputs = load_inputs(cfg)
    models = train_models(cfg, inputs)
    logger.info(f"🔁 {axis} sweep: one training run for {len(points)} values")
    return [
        _sweep_record(axis, value, protocol, classifier, evaluate_models(point, models, inputs, protocol, classifier))
        for value, point in zip(values, points)
    ]
