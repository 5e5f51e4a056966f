"""
Relatórios de análise: ablação de subbandas, distribuições de pesos e tamanho do modelo
"""

import itertools
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch

from ingest.batching import batches
from ingest.dataset import Dataset
from models.network import MultiscaleNet, reconstruct_weights, subband_masked_forward
from quant.wavelet import SUBBAND_NAMES, dwt2
from utils.helpers import write_csv

logger = logging.getLogger(__name__)

HISTOGRAM_BINS = 256

# Combinações aninhadas: ll, ll+lh, ll+lh+hl, completo
NESTED_MASKS = [
    (True, False, False, False),
    (True, True, False, False),
    (True, True, True, False),
    (True, True, True, True),
]


def all_masks() -> List[Tuple[bool, ...]]:
    """As 15 máscaras não vazias, da mais restrita para a completa"""
    masks = [m for m in itertools.product((False, True), repeat=4) if any(m)]
    return sorted(masks, key=lambda m: (sum(m), [not b for b in m]))


def mask_label(mask: Sequence[bool]) -> str:
    if all(mask):
        return "full"
    return "+".join(name for name, on in zip(SUBBAND_NAMES, mask) if on)


class SubbandAnalyzer:
    """Acurácia com pesos reconstruídos por subconjuntos de subbandas"""

    def __init__(self, batch_size: int = 512):
        self.batch_size = batch_size

    def accuracy(self, model: MultiscaleNet, data: Dataset, mask: Sequence[bool],
                 bits: Optional[int] = None) -> float:
        was_training = model.training
        model.eval()
        correct = 0
        try:
            with torch.no_grad():
                for images, labels in batches(data, self.batch_size):
                    logits = subband_masked_forward(model, images, mask, bits)
                    correct += int((logits.argmax(dim=1) == labels).sum())
        finally:
            model.train(was_training)
        return correct / max(1, len(data))

    def sweep(self, model: MultiscaleNet, data: Dataset, nested: bool = False,
              bits: Optional[int] = None) -> List[Dict]:
        """
        Avalia cada máscara

        Args:
            model: Modelo treinado
            data: Dados de avaliação
            nested: Apenas as 4 combinações aninhadas
            bits: Candidato; None avalia em precisão total

        Returns:
            Linhas do esquema "subbands"
        """
        masks = NESTED_MASKS if nested else all_masks()
        rows = []
        for mask in masks:
            accuracy = self.accuracy(model, data, mask, bits)
            rows.append({
                "mask": mask_label(mask),
                **{name: int(on) for name, on in zip(SUBBAND_NAMES, mask)},
                "bits": "fp" if bits is None else bits,
                "accuracy": accuracy,
            })
            logger.info(f"Subbandas {mask_label(mask)}: {accuracy:.2%}")
        return rows


def histogram(values: np.ndarray, edges: Optional[np.ndarray] = None,
              bins: int = HISTOGRAM_BINS) -> pd.DataFrame:
    """Histograma de `bins` classes (intervalo degenerado é expandido)"""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if edges is None:
        low, high = float(values.min()), float(values.max())
        if low == high:
            low, high = low - 0.5, high + 0.5
        edges = np.linspace(low, high, bins + 1)
    counts, edges = np.histogram(values, bins=edges)
    return pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts})


def chi_square_distance(counts_a: np.ndarray, counts_b: np.ndarray) -> float:
    """0.5 * soma((p - q)^2 / (p + q)) entre histogramas normalizados"""
    p = np.asarray(counts_a, dtype=np.float64)
    q = np.asarray(counts_b, dtype=np.float64)
    p = p / p.sum() if p.sum() else p
    q = q / q.sum() if q.sum() else q
    denom = p + q
    mask = denom > 0
    return float(0.5 * np.sum((p[mask] - q[mask]) ** 2 / denom[mask]))


class DistributionAnalyzer:
    """Histogramas por camada de W, de cada subbanda e de W_k para cada k"""

    def __init__(self, bins: int = HISTOGRAM_BINS):
        self.bins = bins

    def layer_tensors(self, model: MultiscaleNet, index: int) -> Dict[str, np.ndarray]:
        layer = model.multiscale_layers()[index]
        with torch.no_grad():
            tensors = {"W": layer.weight.detach().numpy().copy()}
            for name, band in zip(SUBBAND_NAMES, dwt2(layer.weight.detach(), layer.bank)):
                tensors[name] = band.numpy().copy()
            for bits in model.candidates:
                tensors[f"W_{bits}"] = reconstruct_weights(layer, bits).detach().numpy().copy()
        return tensors

    def report(self, model: MultiscaleNet, output_dir: Union[str, Path]) -> List[Dict]:
        """
        Grava um CSV de histograma por tensor e distance.csv com as distâncias
        chi-quadrado entre os W_k de cada camada

        Returns:
            Linhas de distância
        """
        output_dir = Path(output_dir)
        distances = []
        for index in range(len(model.multiscale_layers())):
            tensors = self.layer_tensors(model, index)
            for name, values in tensors.items():
                write_csv(histogram(values, bins=self.bins).to_dict("records"),
                          output_dir / f"layer{index}_{name}.csv", "histogram")

            # Bins comuns para comparar W_k entre candidatos
            reconstructed = {n: v for n, v in tensors.items() if n.startswith("W_")}
            stacked = np.concatenate([v.reshape(-1) for v in reconstructed.values()])
            low, high = float(stacked.min()), float(stacked.max())
            if low == high:
                low, high = low - 0.5, high + 0.5
            edges = np.linspace(low, high, self.bins + 1)
            counts = {n: histogram(v, edges)["count"].to_numpy() for n, v in reconstructed.items()}
            for a, b in itertools.combinations(counts, 2):
                distances.append({"layer": index, "tensor_a": a, "tensor_b": b,
                                  "chi_square": chi_square_distance(counts[a], counts[b])})

        write_csv(distances, output_dir / "distance.csv", "distance")
        logger.info(f"Distribuições de {len(model.multiscale_layers())} camadas gravadas em {output_dir}")
        return distances


def size_report(model: MultiscaleNet) -> List[Dict]:
    """
    Parâmetros compartilhados, theta por candidato, total e a razão theta/W
    """
    counts = model.parameter_report()
    shared = counts.get("W", 0) + counts.get("shared", 0)
    rows = [{"item": "shared_W", "parameters": shared, "millions": shared / 1e6}]
    theta_total = 0
    for bits in model.candidates:
        theta = counts.get(str(bits), 0)
        theta_total += theta
        rows.append({"item": f"theta_{bits}", "parameters": theta, "millions": theta / 1e6})
    total = shared + theta_total
    rows.append({"item": "total", "parameters": total, "millions": total / 1e6})
    ratio = theta_total / (len(model.candidates) * shared) if shared else 0.0
    rows.append({"item": "theta_over_W", "parameters": ratio, "millions": 0.0})
    return rows
