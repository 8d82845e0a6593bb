"""
Seen/unseen class splits
========================

Split files are UTF-8 JSON documents:

    {"n_classes": 60, "unseen": [10, 11, 19, 26, 56]}

`seen` may be given explicitly; otherwise it is the complement of `unseen`
with respect to `n_classes`.
"""

import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

from flora.errors import (
    MissingInputError,
    SplitDuplicateError,
    SplitError,
    SplitOverlapError,
    SplitRangeError,
)

logger = logging.getLogger("flora.data")

BUNDLED_SPLITS = {
    "ntu60_55_5": "ntu60_55_5.json",
    "ntu60_48_12": "ntu60_48_12.json",
    "ntu60_40_20": "ntu60_40_20.json",
    "ntu60_30_30": "ntu60_30_30.json",
    "ntu120_110_10": "ntu120_110_10.json",
    "ntu120_96_24": "ntu120_96_24.json",
    "ntu120_80_40": "ntu120_80_40.json",
    "ntu120_60_60": "ntu120_60_60.json",
    "pku51_46_5": "pku51_46_5.json",
    "pku51_39_12": "pku51_39_12.json",
}

# Three random seen/unseen draws per dataset under each random-split protocol
RANDOM_SPLIT_PROTOCOLS = ("sadave", "starsmie")
RANDOM_SPLIT_BASES = ("ntu60_55_5", "ntu120_110_10", "pku51_46_5")
BUNDLED_SPLITS.update({
    f"{base}_{protocol}_{draw}": f"{base}_{protocol}_{draw}.json"
    for protocol in RANDOM_SPLIT_PROTOCOLS
    for base in RANDOM_SPLIT_BASES
    for draw in (1, 2, 3)
})


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint seen/unseen class-id partition"""
    seen_class_ids: Tuple[int, ...]
    unseen_class_ids: Tuple[int, ...]
    n_classes: int

    @property
    def all_class_ids(self) -> Tuple[int, ...]:
        return tuple(sorted(self.seen_class_ids + self.unseen_class_ids))

    def is_seen(self, class_id: int) -> bool:
        return class_id in self.seen_class_ids

    def to_dict(self) -> Dict:
        return {
            "n_classes": self.n_classes,
            "seen": list(self.seen_class_ids),
            "unseen": list(self.unseen_class_ids),
        }


def _check_ids(ids: Sequence[int], n_classes: int, field: str) -> List[int]:
    ids = [int(i) for i in ids]
    if len(set(ids)) != len(ids):
        raise SplitDuplicateError(f"duplicate ids in '{field}': {ids}")
    bad = [i for i in ids if i < 0 or i >= n_classes]
    if bad:
        raise SplitRangeError(f"ids {bad} in '{field}' outside [0, {n_classes})")
    return sorted(ids)


def make_split(unseen: Sequence[int], n_classes: int, seen: Sequence[int] = None) -> SplitSpec:
    """Build and validate a split; `seen` defaults to the complement of `unseen`"""
    if n_classes <= 0:
        raise SplitError(f"n_classes must be positive, got {n_classes}")
    unseen_ids = _check_ids(unseen, n_classes, "unseen")
    if not unseen_ids:
        raise SplitError("unseen class list is empty")
    if seen is None:
        seen_ids = [c for c in range(n_classes) if c not in set(unseen_ids)]
    else:
        seen_ids = _check_ids(seen, n_classes, "seen")
    overlap = sorted(set(seen_ids) & set(unseen_ids))
    if overlap:
        raise SplitOverlapError(f"classes {overlap} are both seen and unseen")
    return SplitSpec(tuple(seen_ids), tuple(unseen_ids), n_classes)


def parse_split(document: Dict) -> SplitSpec:
    if "unseen" not in document or "n_classes" not in document:
        raise SplitError("split document needs 'unseen' and 'n_classes'")
    return make_split(document["unseen"], int(document["n_classes"]), document.get("seen"))


def load_split(path: Union[str, Path]) -> SplitSpec:
    """Read a split file; a bundled split name is accepted when no such file exists"""
    path = Path(path)
    if not path.exists() and str(path) in BUNDLED_SPLITS:
        return bundled_split(str(path))
    if not path.exists():
        raise MissingInputError(f"split file not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SplitError(f"{path}: not valid JSON ({e})")
    split = parse_split(document)
    logger.debug(f"split {path.name}: {len(split.seen_class_ids)} seen / {len(split.unseen_class_ids)} unseen")
    return split


def write_split(split: SplitSpec, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(split.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


def bundled_split(name: str) -> SplitSpec:
    """Load one of the published benchmark splits shipped with the package"""
    if name not in BUNDLED_SPLITS:
        raise SplitError(f"unknown bundled split '{name}' (available: {', '.join(sorted(BUNDLED_SPLITS))})")
    text = resources.files("flora.splits_data").joinpath(BUNDLED_SPLITS[name]).read_text(encoding="utf-8")
    return parse_split(json.loads(text))


def random_splits(protocol: str, base: str) -> List[SplitSpec]:
    """The three random draws of `base` (e.g. "ntu60_55_5") under `protocol` ("sadave" | "starsmie")"""
    if protocol not in RANDOM_SPLIT_PROTOCOLS or base not in RANDOM_SPLIT_BASES:
        raise SplitError(
            f"no random splits for {protocol}/{base} "
            f"(protocols: {', '.join(RANDOM_SPLIT_PROTOCOLS)}; datasets: {', '.join(RANDOM_SPLIT_BASES)})"
        )
    return [bundled_split(f"{base}_{protocol}_{draw}") for draw in (1, 2, 3)]
