"""
Configurações centralizadas para o Multiscale Quantizer
"""

import os
import copy
import logging
import math
from dataclasses import MISSING, dataclass, field, fields, asdict, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from utils.errors import ConfigError

logger = logging.getLogger(__name__)


class AppConfig:
    """Configuração principal da aplicação"""

    # Informações da aplicação
    APP_NAME = "Multiscale Quantizer"
    VERSION = "1.0.0"

    # Configurações de desenvolvimento
    DEBUG = os.getenv("MSQ_DEBUG", "False").lower() == "true"
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    # Limites de bit-width suportados
    MIN_BITS = 1
    MAX_BITS = 8

    # Versões dos esquemas CSV emitidos pela CLI
    CSV_SCHEMAS = {
        "trainlog": ("1", ["epoch", "step", "bits", "loss"]),
        "eval_all": ("1", ["epoch", "bits", "accuracy", "theta_bits", "forced"]),
        "eval": ("1", ["bits", "accuracy", "theta_bits", "forced"]),
        "subbands": ("1", ["mask", "ll", "lh", "hl", "hh", "bits", "accuracy"]),
        "histogram": ("1", ["bin_left", "bin_right", "count"]),
        "distance": ("1", ["layer", "tensor_a", "tensor_b", "chi_square"]),
        "size": ("1", ["item", "parameters", "millions"]),
        "bench": ("1", ["kernel", "size", "reps", "ns_per_op", "gops"]),
        "parity": ("1", ["bits", "bundle_accuracy", "dedicated_accuracy", "gap"]),
    }

    # Nomes dos artefatos gravados em output_dir
    ARTIFACTS = {
        "bundle": "bundle.msq",
        "trainlog": "trainlog.csv",
        "eval_all": "eval_all.csv",
        "manifest": "manifest.yaml",
    }


ABLATION_TAGS = ("E1", "E2", "E3", "E4", "E5", "E6", "dedicated")

DATASET_KINDS = ("mnist", "cifar10", "synthetic")

TRAIN_MODES = ("sampled", "joint")


@dataclass
class ArchitectureConfig:
    """Arquitetura desk-scale (pré-ativação, BN -> ReLU -> Q_a -> conv)"""

    in_channels: int = 1
    num_classes: int = 10
    stem_channels: int = 16
    # (canais de saída, stride) de cada camada multiscale
    stages: List[List[int]] = field(default_factory=lambda: [
        [16, 1], [32, 2], [32, 1], [64, 2], [64, 1], [64, 1]
    ])
    hidden_features: int = 0
    fixed_bits: int = 8
    act_clip_init: float = 8.0
    weight_clip_mult: float = 3.0
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    wavelet: str = "haar"

    # Chaves de ablação: o que é exclusivo de cada candidato
    per_candidate_act: bool = True
    per_candidate_bn: bool = True
    per_candidate_weight: bool = True
    subband_scales: bool = True

    def validate(self):
        if self.in_channels < 1 or self.num_classes < 2:
            raise ConfigError("architecture: in_channels >= 1 e num_classes >= 2")
        if self.stem_channels < 2 or self.stem_channels % 2:
            raise ConfigError("architecture.stem_channels deve ser par")
        if not self.stages:
            raise ConfigError("architecture.stages não pode ser vazio")
        for stage in self.stages:
            if len(stage) != 2:
                raise ConfigError(f"architecture.stages: entrada inválida {stage}")
            channels, stride = stage
            if channels < 2 or channels % 2:
                raise ConfigError(f"architecture.stages: canais ímpares {channels}")
            if stride not in (1, 2):
                raise ConfigError(f"architecture.stages: stride {stride} não suportado")
        if self.hidden_features < 0 or self.hidden_features % 2:
            raise ConfigError("architecture.hidden_features deve ser par (0 desliga)")
        if not AppConfig.MIN_BITS <= self.fixed_bits <= AppConfig.MAX_BITS:
            raise ConfigError("architecture.fixed_bits fora de [1, 8]")
        if self.act_clip_init <= 0 or self.weight_clip_mult <= 0:
            raise ConfigError("architecture: inicialização de clip deve ser positiva")
        if not 0 < self.bn_momentum <= 1 or self.bn_eps <= 0:
            raise ConfigError("architecture: bn_momentum em (0,1] e bn_eps > 0")
        if self.wavelet != "haar":
            raise ConfigError(f"architecture.wavelet: base '{self.wavelet}' não disponível")


@dataclass
class DatasetConfig:
    """Origem dos dados de treino/avaliação"""

    kind: str = "synthetic"
    path: Optional[str] = None
    num_classes: int = 10
    synthetic_n: int = 2000
    synthetic_test_n: int = 500
    synthetic_shape: List[int] = field(default_factory=lambda: [1, 16, 16])
    subset: Optional[int] = None
    augment: Optional[bool] = None

    def validate(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset.kind deve ser um de {DATASET_KINDS}")
        if self.kind != "synthetic" and not self.path:
            raise ConfigError(f"dataset.path é obrigatório para '{self.kind}'")
        if self.kind == "synthetic":
            if self.synthetic_n < self.num_classes or self.synthetic_test_n < self.num_classes:
                raise ConfigError("dataset.synthetic_n deve ser >= num_classes")
            if len(self.synthetic_shape) != 3:
                raise ConfigError("dataset.synthetic_shape deve ser [C, H, W]")
        if self.subset is not None and self.subset < 1:
            raise ConfigError("dataset.subset deve ser >= 1")

    @property
    def augment_enabled(self) -> bool:
        # Padrão: ligado apenas para CIFAR
        if self.augment is None:
            return self.kind == "cifar10"
        return self.augment


@dataclass
class PlanConfig:
    """TrainPlan: candidatos, amostragem e otimizador"""

    candidates: List[int] = field(default_factory=lambda: [8, 4, 2, 1])
    probabilities: Optional[List[float]] = None
    warmup_iters: Optional[int] = None
    skip_warmup: bool = False
    epochs: int = 6
    steps_per_epoch: Optional[int] = None
    batch_size: int = 128
    eval_batch_size: int = 512
    lr: float = 1e-2
    decay_epochs: Optional[List[int]] = None
    decay_factor: float = 0.1
    weight_decay: float = 1e-4
    momentum: float = 0.9
    mode: str = "sampled"
    init_bundle: Optional[str] = None

    def validate(self):
        if not self.candidates:
            raise ConfigError("plan.candidates não pode ser vazio")
        if len(set(self.candidates)) != len(self.candidates):
            raise ConfigError("plan.candidates contém duplicatas")
        for bits in self.candidates:
            if not AppConfig.MIN_BITS <= bits <= AppConfig.MAX_BITS:
                raise ConfigError(f"plan.candidates: {bits} fora de [1, 8]")
        if self.probabilities is not None:
            if len(self.probabilities) != len(self.candidates):
                raise ConfigError("plan.probabilities deve ter um valor por candidato")
            if any(p < 0 for p in self.probabilities):
                raise ConfigError("plan.probabilities não aceita valores negativos")
            if abs(sum(self.probabilities) - 1.0) > 1e-9:
                raise ConfigError("plan.probabilities deve somar 1")
        if self.warmup_iters is not None and self.warmup_iters < 0:
            raise ConfigError("plan.warmup_iters deve ser >= 0")
        if self.epochs < 1:
            raise ConfigError("plan.epochs deve ser >= 1")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError("plan.steps_per_epoch deve ser >= 1")
        if self.batch_size < 2 or self.eval_batch_size < 1:
            raise ConfigError("plan.batch_size deve ser >= 2 e plan.eval_batch_size >= 1")
        if self.lr <= 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("plan: lr > 0, weight_decay >= 0, momentum em [0,1)")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("plan.decay_factor deve estar em (0, 1]")
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"plan.mode deve ser um de {TRAIN_MODES}")

    def sorted_candidates(self) -> Tuple[List[int], List[float]]:
        """Candidatos em ordem decrescente com as probabilidades alinhadas"""
        probs = self.probabilities
        if probs is None:
            probs = [1.0 / len(self.candidates)] * len(self.candidates)
        pairs = sorted(zip(self.candidates, probs), key=lambda item: -item[0])
        return [bits for bits, _ in pairs], [p for _, p in pairs]

    def resolved_decay_epochs(self) -> List[int]:
        # Padrão desk-scale: decaimento em 50% e 75% das épocas
        if self.decay_epochs is not None:
            return sorted(self.decay_epochs)
        marks = {max(1, int(self.epochs * 0.5)), max(1, int(self.epochs * 0.75))}
        return sorted(m for m in marks if m < self.epochs)


@dataclass
class RunConfig:
    """Configuração completa de uma execução"""

    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    output_dir: str = "runs/default"
    seed: int = 0
    ablation: Optional[str] = None

    def validate(self):
        self.architecture.validate()
        self.dataset.validate()
        self.plan.validate()
        if self.ablation is not None and self.ablation not in ABLATION_TAGS:
            raise ConfigError(f"ablation deve ser um de {ABLATION_TAGS}")
        if self.architecture.num_classes != self.dataset.num_classes:
            raise ConfigError("architecture.num_classes difere de dataset.num_classes")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_SECTIONS = {
    "architecture": ArchitectureConfig,
    "dataset": DatasetConfig,
    "plan": PlanConfig,
}


def build_section(cls, values: Dict[str, Any], section: str):
    """Constrói um dataclass rejeitando chaves desconhecidas"""
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"seção '{section}' deve ser um mapeamento")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"chaves desconhecidas em '{section}': {unknown}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"seção '{section}' inválida: {e}") from e


def run_config_from_dict(raw: Dict[str, Any]) -> RunConfig:
    """Converte um dicionário (YAML) em RunConfig validado"""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("o arquivo de configuração deve conter um mapeamento")

    top_level = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - top_level)
    if unknown:
        raise ConfigError(f"chaves desconhecidas: {unknown}")

    kwargs = {}
    for name, value in raw.items():
        if name in _SECTIONS:
            kwargs[name] = build_section(_SECTIONS[name], value, name)
        else:
            kwargs[name] = value

    config = RunConfig(**kwargs)
    _check_types(config)
    return config.validate()


def _check_types(config: RunConfig):
    """Verificação rasa de tipos para valores escalares vindos do YAML"""
    for section in (config, config.architecture, config.dataset, config.plan):
        for f in fields(section):
            value = getattr(section, f.name)
            if is_dataclass(value) or value is None:
                continue
            default = None if f.default is MISSING else f.default
            if isinstance(default, bool) and not isinstance(value, bool):
                raise ConfigError(f"'{f.name}' deve ser booleano")
            if isinstance(default, int) and not isinstance(default, bool):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"'{f.name}' deve ser inteiro")
            if isinstance(default, float) and not isinstance(value, (int, float)):
                # YAML 1.1 lê "1e-3" como string
                try:
                    value = float(value)
                except (TypeError, ValueError):
                    raise ConfigError(f"'{f.name}' deve ser numérico") from None
                if not math.isfinite(value):
                    raise ConfigError(f"'{f.name}' deve ser finito")
                setattr(section, f.name, value)
            if isinstance(value, bool) and isinstance(default, float):
                raise ConfigError(f"'{f.name}' deve ser numérico")


def apply_overrides(raw: Dict[str, Any], overrides: Dict[str, str]) -> Dict[str, Any]:
    """Aplica overrides pontuados (ex.: plan.epochs=3) sobre o dicionário bruto"""
    result = copy.deepcopy(raw) if raw else {}
    for dotted, text in overrides.items():
        keys = dotted.split(".")
        node = result
        for key in keys[:-1]:
            child = node.get(key)
            if child is None:
                child = {}
                node[key] = child
            if not isinstance(child, dict):
                raise ConfigError(f"override '{dotted}' atravessa um valor escalar")
            node = child
        try:
            node[keys[-1]] = yaml.safe_load(text) if isinstance(text, str) else text
        except yaml.YAMLError as e:
            raise ConfigError(f"valor inválido para '{dotted}': {e}") from e
    return result


def load_run_config(path: Optional[str], overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """Lê o YAML de configuração, aplica overrides e valida tudo"""
    raw: Dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"arquivo de configuração não encontrado: {path}")
        try:
            raw = yaml.safe_load(config_path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"YAML inválido em {path}: {e}") from e

    raw = apply_overrides(raw, overrides or {})
    config = run_config_from_dict(raw)
    logger.debug(f"Configuração carregada de {path}: {config}")
    return config
