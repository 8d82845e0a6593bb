"""
Velocity-error classifier
=========================

For a test skeleton latent z_s and a candidate class y with semantic latent
z_a^y, pair them on the flow path at a fixed inference timestep t and score

    ε_y = ‖v_θ(z_t^y, t) − v_y*‖₂     (over all token × dim entries)

ZSL picks argmin ε_y over unseen classes. GZSL first compares the best seen
and unseen errors, δ_s / δ_u ≤ γ, and pushes the losing domain out of the
argmin with a large additive penalty α. Ties go to the lower class id.

With a noise source the semantic side of the path is the noise mean (zero);
a conditioned network gets the candidate's token-mean semantic latent.
"""

import logging
from typing import Optional, Sequence

import numpy as np

from flora.config import PredictConfig
from flora.errors import ConfigError, EmptyCandidateError, ShapeError
from flora.flow_matching import FlowNet, gt_velocity, interpolate

logger = logging.getLogger("flora.predict")


def _timesteps(cfg: PredictConfig, t: Optional[float] = None) -> Sequence[float]:
    if t is not None:
        return [t]
    return list(cfg.multi_t) if cfg.multi_t else [cfg.t]


def velocity_errors(net: FlowNet, z_s: np.ndarray, candidates: np.ndarray, cfg: PredictConfig,
                    sigma_min: float = 1e-5, direction: str = "semantic_to_skeleton",
                    t: Optional[float] = None, source: str = "latent") -> np.ndarray:
    """
    ε for every (test item, candidate) pairing

    Args:
        net: trained velocity network
        z_s: mean-mode skeleton latents, (N, M, L)
        candidates: mean-mode semantic latents of the candidate classes, (C, M, L)
        cfg: predict section (t / multi_t, chunk_size)
        sigma_min: σ_min used in training
        direction: flow direction used in training
        t: explicit timestep, overriding cfg
        source: flow source used in training ('noise' replaces z_a by zeros)

    Returns:
        (N, C) errors; averaged over cfg.multi_t when set
    """
    z_s = np.asarray(z_s, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.shape[0] == 0:
        raise EmptyCandidateError("no candidate classes")
    if z_s.ndim != 3 or z_s.shape[1:] != candidates.shape[1:]:
        raise ShapeError(f"skeleton latents {z_s.shape} vs candidate latents {candidates.shape}")
    if source not in ("latent", "noisy_latent", "noise"):
        raise ConfigError(f"unknown flow source: {source}")

    N, C = z_s.shape[0], candidates.shape[0]
    steps = _timesteps(cfg, t)
    errors = np.zeros((N, C))
    per_chunk = max(1, cfg.chunk_size // C)
    for start in range(0, N, per_chunk):
        block = z_s[start:start + per_chunk]
        n = block.shape[0]
        skel = np.repeat(block, C, axis=0)
        sem = np.tile(candidates, (n, 1, 1))
        condition = sem.mean(axis=1) if net.conditioned else None
        if source == "noise":
            sem = np.zeros_like(sem)
        z0, z1 = (sem, skel) if direction == "semantic_to_skeleton" else (skel, sem)
        target = gt_velocity(z0, z1, sigma_min)
        for step in steps:
            ts = np.full(n * C, step)
            v_hat = net.velocity(interpolate(z0, z1, ts, sigma_min), ts, condition).data
            eps = np.sqrt(((v_hat - target) ** 2).sum(axis=(1, 2)))
            errors[start:start + n] += eps.reshape(n, C)
    return errors / len(steps)


def velocity_error(net: FlowNet, z_s: np.ndarray, z_a_y: np.ndarray, t: float, sigma_min: float = 1e-5,
                   direction: str = "semantic_to_skeleton", source: str = "latent") -> float:
    """ε_y for one skeleton latent and one candidate, both (M, L)"""
    z_s = np.asarray(z_s, dtype=np.float64)
    z_a_y = np.asarray(z_a_y, dtype=np.float64)
    if z_s.shape != z_a_y.shape:
        raise ShapeError(f"z_s {z_s.shape} vs z_a {z_a_y.shape}")
    errors = velocity_errors(net, z_s[None], z_a_y[None], PredictConfig(), sigma_min, direction, t=t, source=source)
    return float(errors[0, 0])


def argmin_by_id(errors: np.ndarray, candidate_ids: Sequence[int]) -> np.ndarray:
    """Row-wise argmin mapped to class ids; ties → lowest id"""
    ids = np.asarray(candidate_ids, dtype=np.int64)
    if ids.size == 0:
        raise EmptyCandidateError("no candidate classes")
    order = np.argsort(ids, kind="stable")
    errors = np.atleast_2d(errors)[:, order]
    return ids[order][np.argmin(errors, axis=1)]


def domain_ratio(delta_s: np.ndarray, delta_u: np.ndarray) -> np.ndarray:
    """δ_s / δ_u with 0/0 → 1 and x/0 → +inf"""
    delta_s = np.asarray(delta_s, dtype=np.float64)
    delta_u = np.asarray(delta_u, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = delta_s / delta_u
    ratio = np.where((delta_u == 0) & (delta_s == 0), 1.0, ratio)
    return np.where((delta_u == 0) & (delta_s > 0), np.inf, ratio)


def gzsl_decide(errors: np.ndarray, candidate_ids: Sequence[int], seen_ids: Sequence[int],
                gamma: float, alpha: float) -> np.ndarray:
    """
    Penalized argmin over seen ∪ unseen candidates

    errors: (N, C) or (C,), columns aligned with `candidate_ids`
    """
    errors = np.atleast_2d(np.asarray(errors, dtype=np.float64))
    ids = np.asarray(candidate_ids, dtype=np.int64)
    is_seen = np.isin(ids, np.asarray(seen_ids, dtype=np.int64))
    if not is_seen.any() or is_seen.all():
        raise EmptyCandidateError("GZSL needs both seen and unseen candidates")

    delta_s = errors[:, is_seen].min(axis=1)
    delta_u = errors[:, ~is_seen].min(axis=1)
    seen_favoured = domain_ratio(delta_s, delta_u) <= gamma
    penalized = is_seen[None, :] ^ seen_favoured[:, None]
    return argmin_by_id(errors + alpha * penalized, ids)


def zsl_predict(net: FlowNet, z_s: np.ndarray, candidates: np.ndarray, candidate_ids: Sequence[int],
                cfg: PredictConfig, sigma_min: float = 1e-5, direction: str = "semantic_to_skeleton",
                source: str = "latent") -> int:
    """argmin over unseen candidates of ε_y, for one (M, L) skeleton latent"""
    if len(candidate_ids) == 0:
        raise EmptyCandidateError("ZSL candidate set is empty")
    errors = velocity_errors(net, np.asarray(z_s)[None], candidates, cfg, sigma_min, direction, source=source)
    return int(argmin_by_id(errors, candidate_ids)[0])


def gzsl_predict(net: FlowNet, z_s: np.ndarray, candidates: np.ndarray, candidate_ids: Sequence[int],
                 seen_ids: Sequence[int], cfg: PredictConfig, sigma_min: float = 1e-5,
                 direction: str = "semantic_to_skeleton", source: str = "latent") -> int:
    errors = velocity_errors(net, np.asarray(z_s)[None], candidates, cfg, sigma_min, direction, source=source)
    return int(gzsl_decide(errors, candidate_ids, seen_ids, cfg.gamma, cfg.alpha)[0])


def flow_predictions(net: FlowNet, z_s: np.ndarray, class_latents: np.ndarray, candidate_ids: Sequence[int],
                     cfg: PredictConfig, protocol: str = "zsl", seen_ids: Sequence[int] = (),
                     sigma_min: float = 1e-5, direction: str = "semantic_to_skeleton",
                     source: str = "latent") -> np.ndarray:
    """
    Predict every test item at once

    Args:
        z_s: (N, M, L) test skeleton latents
        class_latents: (n_classes, M, L) semantic latents of every class
        candidate_ids: admissible classes for the protocol
        protocol: 'zsl' | 'gzsl'
    """
    ids = np.asarray(sorted(candidate_ids), dtype=np.int64)
    if ids.size == 0:
        raise EmptyCandidateError(f"{protocol} candidate set is empty")
    errors = velocity_errors(net, z_s, class_latents[ids], cfg, sigma_min, direction, source=source)
    logger.debug(f"velocity errors {errors.shape}, mean {errors.mean():.4f}")
    if protocol == "zsl":
        return argmin_by_id(errors, ids)
    if protocol == "gzsl":
        return gzsl_decide(errors, ids, seen_ids, cfg.gamma, cfg.alpha)
    raise ConfigError(f"unknown protocol: {protocol}")
