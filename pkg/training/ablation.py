"""
Variantes de ablação E1..E6 e baseline de modelos dedicados
"""

import copy
import logging
from pathlib import Path
from typing import Dict, List

from config.settings import AppConfig, RunConfig
from training.trainer import TrainResult, evaluate, evaluate_forced, run_training
from utils.errors import ConfigError
from utils.helpers import write_csv

logger = logging.getLogger(__name__)

# (per_candidate_act, per_candidate_bn, per_candidate_weight, subband_scales)
ABLATION_FLAGS = {
    "E1": (False, False, False, False),
    "E2": (False, False, False, False),
    "E3": (True, False, False, False),
    "E4": (True, True, False, False),
    "E5": (True, True, True, False),
    "E6": (True, True, True, True),
}

FIXED_BITS = 8


def variant_config(config: RunConfig, tag: str) -> RunConfig:
    """
    Configuração da variante `tag` derivada de `config`

    E1 treina apenas em 8 bits; E2..E6 mantêm K e ligam, em ordem, os
    parâmetros exclusivos de cada candidato.
    """
    if tag not in ABLATION_FLAGS:
        raise ConfigError(f"variante de ablação desconhecida: {tag}")
    variant = copy.deepcopy(config)
    arch = variant.architecture
    (arch.per_candidate_act, arch.per_candidate_bn,
     arch.per_candidate_weight, arch.subband_scales) = ABLATION_FLAGS[tag]
    if tag == "E1":
        variant.plan.candidates = [FIXED_BITS]
        variant.plan.probabilities = None
    variant.ablation = tag
    variant.output_dir = str(Path(config.output_dir) / tag)
    return variant.validate()


def run_variant(config: RunConfig, tag: str, manager) -> List[Dict]:
    """
    Treina a variante e grava eval_all.csv em output_dir/<tag>

    E1 é avaliado em todos os k do plano original via force-bits
    (theta do candidato mais próximo).
    """
    variant = variant_config(config, tag)
    logger.info(f"Ablação {tag}: K={variant.plan.candidates}")
    result = run_training(variant, manager)

    batch_size = config.plan.eval_batch_size
    rows = []
    for bits in sorted(config.plan.candidates, reverse=True):
        row = evaluate_forced(result.model, result.test_data, bits, batch_size)
        row["epoch"] = variant.plan.epochs - 1
        rows.append(row)
        logger.info(f"{tag} k={bits}: {row['accuracy']:.2%}")

    output_dir = Path(variant.output_dir)
    write_csv(result.log.step_rows(), output_dir / AppConfig.ARTIFACTS["trainlog"], "trainlog")
    write_csv(rows, output_dir / AppConfig.ARTIFACTS["eval_all"], "eval_all")
    return rows


def dedicated_parity(config: RunConfig, manager, bundle_result: TrainResult = None) -> List[Dict]:
    """
    Treina um modelo K={k} por candidato com o mesmo orçamento e compara com o
    bundle multiscale; grava parity.csv
    """
    if bundle_result is None:
        bundle_result = run_training(config, manager)
    batch_size = config.plan.eval_batch_size

    rows = []
    for bits in sorted(config.plan.candidates, reverse=True):
        single = copy.deepcopy(config)
        single.plan.candidates = [bits]
        single.plan.probabilities = None
        single.output_dir = str(Path(config.output_dir) / f"dedicated_{bits}")
        single.validate()
        result = run_training(single, manager)

        bundle_acc = evaluate(bundle_result.model, bundle_result.test_data, bits, batch_size)
        dedicated_acc = evaluate(result.model, result.test_data, bits, batch_size)
        rows.append({"bits": bits, "bundle_accuracy": bundle_acc,
                     "dedicated_accuracy": dedicated_acc, "gap": dedicated_acc - bundle_acc})
        logger.info(f"Paridade k={bits}: bundle {bundle_acc:.2%} vs dedicado {dedicated_acc:.2%}")

    write_csv(rows, Path(config.output_dir) / "parity.csv", "parity")
    return rows
