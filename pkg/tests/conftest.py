import numpy as np
import pytest

from flora.config import RunConfig
from flora.feature_pack import write_fpack
from flora.splits import write_split
from flora.synthetic import generate_synthetic

TINY = {
    "synthetic": {
        "n_classes": 6, "n_unseen": 2, "samples_per_class": 12,
        "d_s": 8, "d_a": 6, "M_a": 2, "intrinsic_dim": 3, "seed": 3,
    },
    "attune": {"k": 2, "tau": 0.5},
    "align": {"latent_dim": 4, "hidden": 16, "iterations": 25, "batch": 16, "lr": 1e-3, "log_every": 10},
    "flow": {"iterations": 15, "batch": 16, "width": 16, "embed_width": 8, "frequencies": 4, "lr": 1e-3, "log_every": 5},
    "predict": {"n_synth": 8, "linear_iterations": 40, "chunk_size": 32},
    "seed": 11,
}


@pytest.fixture(autouse=True)
def _no_seed_override(monkeypatch):
    monkeypatch.delenv("FLORA_SEED", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg(tmp_path) -> RunConfig:
    document = {k: dict(v) if isinstance(v, dict) else v for k, v in TINY.items()}
    document["paths"] = {
        "skeleton_pack": str(tmp_path / "data" / "skeleton.fpack"),
        "semantic_pack": str(tmp_path / "data" / "semantic.fpack"),
        "split": str(tmp_path / "data" / "split.json"),
        "checkpoint_dir": str(tmp_path / "runs" / "checkpoints"),
        "report_dir": str(tmp_path / "runs" / "reports"),
    }
    document["sweep"] = {"output": str(tmp_path / "runs" / "reports" / "sweep.csv")}
    return RunConfig.from_dict(document)


@pytest.fixture
def tiny_data(tiny_cfg):
    return generate_synthetic(tiny_cfg.synthetic)


@pytest.fixture
def tiny_files(tiny_cfg, tiny_data):
    skeleton, semantic, split = tiny_data
    write_fpack(skeleton, tiny_cfg.paths.skeleton_pack)
    write_fpack(semantic, tiny_cfg.paths.semantic_pack)
    write_split(split, tiny_cfg.paths.split)
    return tiny_cfg
