"""
Fixtures compartilhadas: rede e dados minúsculos para testes rápidos em CPU
"""

import sys
from pathlib import Path

import pytest
import torch
import yaml

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from config.settings import ArchitectureConfig, PlanConfig  # noqa: E402
from ingest.synthetic import synthetic_task  # noqa: E402
from models.network import build_model  # noqa: E402

CANDIDATES = [8, 4, 2, 1]


@pytest.fixture
def tiny_arch():
    return ArchitectureConfig(in_channels=1, num_classes=4, stem_channels=4,
                              stages=[[4, 1], [8, 2], [8, 1]])


@pytest.fixture
def tiny_data():
    return synthetic_task(seed=3, n=32, num_classes=4, shape=(1, 8, 8))


@pytest.fixture
def tiny_model(tiny_arch):
    torch.manual_seed(0)
    return build_model(tiny_arch, CANDIDATES)


@pytest.fixture
def tiny_plan():
    return PlanConfig(candidates=list(CANDIDATES), warmup_iters=2, epochs=1, steps_per_epoch=3,
                      batch_size=8, eval_batch_size=32, lr=0.05)


@pytest.fixture
def tiny_config_file(tmp_path):
    """YAML de uma execução sintética que treina em poucos segundos"""
    raw = {
        "architecture": {"in_channels": 1, "num_classes": 4, "stem_channels": 4,
                         "stages": [[4, 1], [8, 2]]},
        "dataset": {"kind": "synthetic", "num_classes": 4, "synthetic_n": 32,
                    "synthetic_test_n": 16, "synthetic_shape": [1, 8, 8]},
        "plan": {"candidates": list(CANDIDATES), "warmup_iters": 1, "epochs": 1,
                 "steps_per_epoch": 2, "batch_size": 8, "eval_batch_size": 16},
        "output_dir": str(tmp_path / "run"),
        "seed": 5,
    }
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return path
