"""
Evaluation reports
==================

ZSL: top-1 accuracy over unseen test items (candidates = unseen classes).
GZSL: S = accuracy on seen test items, U = accuracy on unseen test items,
H = 2SU / (S + U), all candidates admissible.

Reports are pydantic models serialized as sorted-key JSON so two runs of the
same config diff cleanly.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from flora.errors import ConfigError, ShapeError, SplitRangeError
from flora.splits import SplitSpec

logger = logging.getLogger("flora.predict")


def harmonic_mean(seen: float, unseen: float) -> float:
    """2SU / (S + U); 0 when S + U = 0"""
    if seen + unseen == 0:
        return 0.0
    return 2.0 * seen * unseen / (seen + unseen)


class EvalReport(BaseModel):
    """One evaluation of one classifier under one protocol"""
    protocol: Literal["zsl", "gzsl"]
    classifier: Literal["flow", "similarity", "linear"] = "flow"
    n_items: int = Field(ge=0)
    acc: Optional[float] = Field(None, ge=0.0, le=1.0, description="ZSL top-1 accuracy")
    seen: Optional[float] = Field(None, ge=0.0, le=1.0, description="GZSL S")
    unseen: Optional[float] = Field(None, ge=0.0, le=1.0, description="GZSL U")
    harmonic: Optional[float] = Field(None, ge=0.0, le=1.0, description="GZSL H")
    per_class: Dict[str, float] = Field(default_factory=dict)
    confusion: Dict[str, Dict[str, int]] = Field(default_factory=dict)
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _harmonic_consistent(self):
        if self.protocol == "gzsl":
            if self.seen is None or self.unseen is None or self.harmonic is None:
                raise ValueError("GZSL report needs seen, unseen and harmonic")
            if abs(self.harmonic - harmonic_mean(self.seen, self.unseen)) > 1e-12:
                raise ValueError("harmonic does not match 2SU/(S+U)")
        elif self.acc is None:
            raise ValueError("ZSL report needs acc")
        return self

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @property
    def headline(self) -> float:
        return self.acc if self.protocol == "zsl" else self.harmonic


def _accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    if labels.size == 0:
        return 0.0
    return float(np.mean(predictions == labels))


def evaluate(predictions: Sequence[int], labels: Sequence[int], split: SplitSpec, protocol: str,
             classifier: str = "flow", config: Optional[Dict[str, Any]] = None,
             seed: Optional[int] = None) -> EvalReport:
    """
    Score predictions against ground truth

    Args:
        predictions: predicted class id per test item
        labels: true class id per test item
        split: seen/unseen partition
        protocol: 'zsl' (labels must be unseen) or 'gzsl'
        classifier: which classifier produced the predictions
        config: config echo to embed
        seed: run seed to embed

    Raises:
        ShapeError: predictions and labels differ in length
        SplitRangeError: a label is outside the protocol's class set
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ShapeError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")

    admissible = split.unseen_class_ids if protocol == "zsl" else split.all_class_ids
    outside = sorted(set(labels.tolist()) - set(admissible))
    if outside:
        raise SplitRangeError(f"labels {outside} are not {protocol} test classes")

    per_class = {}
    for c in sorted(set(labels.tolist())):
        mask = labels == c
        per_class[str(c)] = _accuracy(predictions[mask], labels[mask])

    confusion: Dict[str, Dict[str, int]] = {}
    for true, pred in zip(labels.tolist(), predictions.tolist()):
        row = confusion.setdefault(str(true), {})
        row[str(pred)] = row.get(str(pred), 0) + 1
    confusion = {k: dict(sorted(v.items(), key=lambda kv: int(kv[0]))) for k, v in sorted(confusion.items(), key=lambda kv: int(kv[0]))}

    fields: Dict[str, Any] = dict(
        protocol=protocol, classifier=classifier, n_items=int(labels.size),
        per_class=per_class, confusion=confusion, config=config or {}, seed=seed,
    )
    if protocol == "zsl":
        fields["acc"] = _accuracy(predictions, labels)
    elif protocol == "gzsl":
        seen_mask = np.isin(labels, split.seen_class_ids)
        S = _accuracy(predictions[seen_mask], labels[seen_mask])
        U = _accuracy(predictions[~seen_mask], labels[~seen_mask])
        fields.update(seen=S, unseen=U, harmonic=harmonic_mean(S, U))
    else:
        raise ConfigError(f"unknown protocol: {protocol}")

    report = EvalReport(**fields)
    if protocol == "zsl":
        logger.info(f"📊 {classifier} ZSL: Acc={100 * report.acc:.1f} over {report.n_items} items")
    else:
        logger.info(
            f"📊 {classifier} GZSL: S={100 * report.seen:.1f} U={100 * report.unseen:.1f} "
            f"H={100 * report.harmonic:.1f} over {report.n_items} items"
        )
    return report


def render_table(reports: List[EvalReport]) -> str:
    """Plain-text Acc / S / U / H table, percentages at one decimal"""
    def pct(value: Optional[float]) -> str:
        return "-" if value is None else f"{100 * value:.1f}"

    lines = [f"{'classifier':<12}{'protocol':<10}{'Acc':>8}{'S':>8}{'U':>8}{'H':>8}"]
    for r in reports:
        lines.append(
            f"{r.classifier:<12}{r.protocol:<10}{pct(r.acc):>8}{pct(r.seen):>8}{pct(r.unseen):>8}{pct(r.harmonic):>8}"
        )
    return "\n".join(lines)
