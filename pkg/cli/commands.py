"""
Comandos da linha de comando: train, eval, switch, report, ablate, bench, fetch
"""

import argparse
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from analysis.reports import DistributionAnalyzer, SubbandAnalyzer, size_report
from config.settings import ABLATION_TAGS, AppConfig, DatasetConfig, build_section, load_run_config
from ingest.dataset import Dataset, normalize
from ingest.manager import DatasetManager, fetch_dataset
from quant import packed
from store.bundle import ModelBundle, load, save
from store.hot_swap import export_quantized, hot_swap, hot_swap_from_file
from training.ablation import ABLATION_FLAGS, dedicated_parity, run_variant
from training.trainer import evaluate_forced, run_training
from utils.errors import (
    BenchmarkError, CandidateError, ConfigError, DataError, DomainError, FormatError,
    GeometryError, IntegrityError, MSQError, NumericalError,
)
from utils.helpers import Timer, write_csv, write_manifest

logger = logging.getLogger(__name__)

FORCE_BITS_PROTOCOL = "nearest-candidate (empate: maior k)"

EXIT_CODES = [
    (ConfigError, 2),
    (GeometryError, 2),
    (DomainError, 2),
    (CandidateError, 6),
    (FormatError, 5),
    (IntegrityError, 5),
    (DataError, 3),
    (NumericalError, 4),
    (BenchmarkError, 7),
]


def exit_code_for(error: Exception) -> int:
    for error_type, code in EXIT_CODES:
        if isinstance(error, error_type):
            return code
    return 1


def parse_overrides(extra: Sequence[str]) -> Dict[str, str]:
    """
    Converte `--secao.chave valor` (ou `--secao.chave=valor`) em overrides

    Raises:
        ConfigError: argumento desconhecido ou sem valor
    """
    overrides: Dict[str, str] = {}
    tokens = list(extra)
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or "." not in token:
            raise ConfigError(f"argumento desconhecido: {token}")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"override sem valor: {token}")
            i += 1
            value = tokens[i]
        overrides[key] = value
        i += 1
    return overrides


def _bits_arg(text: str):
    if text == "all":
        return text
    try:
        return int(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bit-width inválido: {text}") from e


def _dataset_for(args, bundle: ModelBundle) -> Dataset:
    """Split de teste do dataset do bundle (ou de --config), normalizado com as constantes do bundle"""
    if getattr(args, "config", None):
        config = load_run_config(args.config, args.overrides)
        dataset_config, seed = config.dataset, config.seed
    else:
        raw = bundle.metadata.get("dataset")
        if raw is None:
            raise ConfigError("bundle sem metadados de dataset; informe --config")
        dataset_config = build_section(DatasetConfig, raw, "dataset")
        dataset_config.validate()
        seed = int(bundle.metadata.get("seed", 0))
    test = DatasetManager(dataset_config, seed).load("test")
    if bundle.mean:
        test = test.with_stats(bundle.mean, bundle.std)
    return test


def _output_dir(args, fallback: Path) -> Path:
    return Path(args.output_dir) if getattr(args, "output_dir", None) else fallback


def cmd_train(args) -> int:
    """Warmup + treinamento dinâmico; grava bundle.msq, trainlog.csv e eval_all.csv"""
    config = load_run_config(args.config, args.overrides)
    if args.output_dir:
        config.output_dir = args.output_dir
    output_dir = Path(config.output_dir)

    manager = DatasetManager(config.dataset, config.seed)
    result = run_training(config, manager)

    bundle = ModelBundle.from_model(
        result.model, result.train_data.mean, result.train_data.std,
        metadata={"seed": config.seed, "ablation": config.ablation,
                  "dataset": asdict(config.dataset), "plan": asdict(config.plan)},
    )
    save(bundle, output_dir / AppConfig.ARTIFACTS["bundle"], checksum=args.checksum)
    result.log.write(output_dir)
    write_manifest(output_dir, {"command": "train", "config": config.to_dict(),
                                "force_bits_protocol": FORCE_BITS_PROTOCOL})

    final = result.log.evals[-1][1] if result.log.evals else {}
    for bits, accuracy in final.items():
        print(f"k={bits}: {accuracy:.4f}")
    logger.info(f"Treino concluído; artefatos em {output_dir}")
    return 0


def cmd_eval(args) -> int:
    """Acurácia top-1 por k; --bits all varre K e --force-bits avalia fora de K"""
    bundle = load(args.bundle)
    model = bundle.build_model()
    data = _dataset_for(args, bundle)

    bits_list = list(bundle.candidates) if args.bits == "all" else [args.bits]
    for bits in bits_list:
        if bits not in bundle.candidates:
            raise CandidateError(bits, bundle.candidates)
    bits_list += [k for k in (args.force_bits or []) if k not in bits_list]

    batch_size = int(bundle.metadata.get("plan", {}).get("eval_batch_size", 512))
    rows = [evaluate_forced(model, data, bits, batch_size) for bits in bits_list]
    for row in rows:
        suffix = f" (theta de k={row['theta_bits']})" if row["forced"] else ""
        print(f"k={row['bits']}: {row['accuracy']:.4f}{suffix}")

    output_dir = _output_dir(args, Path(args.bundle).parent / "eval")
    write_csv(rows, output_dir / "eval.csv", "eval")
    write_manifest(output_dir, {"command": "eval", "bundle": str(args.bundle),
                                "force_bits_protocol": FORCE_BITS_PROTOCOL})
    return 0


def _switch_input(args, bundle: ModelBundle) -> torch.Tensor:
    if args.input:
        array = np.load(args.input)
        if array.ndim == 3:
            array = array[None]
        if array.dtype == np.uint8:
            array = normalize(array, bundle.mean, bundle.std)
        return torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32))
    data = _dataset_for(args, bundle).subset(args.samples)
    return torch.from_numpy(normalize(data.images, data.mean, data.std))


def cmd_switch(args) -> int:
    """Hot-swap para cada k da sequência, inferência e exportação opcional"""
    materialized, bundle, timings = hot_swap_from_file(args.bundle, args.bits[0])
    print(f"carga do bundle: {timings['load'] * 1000:.1f} ms")
    batch = _switch_input(args, bundle)

    for i, bits in enumerate(args.bits):
        if i == 0:
            elapsed = timings["materialize"]
        else:
            materialized, elapsed = hot_swap(bundle, bits)
        logits = materialized(batch, use_packed=args.packed)
        predictions = logits.argmax(dim=1).tolist()
        print(f"k={bits}: hot-swap {elapsed * 1000:.1f} ms; predições {predictions}")

    if args.export:
        export_quantized(materialized, args.export, checksum=args.checksum)
    return 0


def cmd_report(args) -> int:
    """Relatórios de subbandas, distribuições ou tamanho"""
    bundle = load(args.bundle)
    model = bundle.build_model()
    output_dir = _output_dir(args, Path(args.bundle).parent / "reports")

    if args.kind == "subbands":
        data = _dataset_for(args, bundle)
        if args.bits is not None and args.bits not in bundle.candidates:
            raise CandidateError(args.bits, bundle.candidates)
        rows = SubbandAnalyzer().sweep(model, data, nested=args.nested, bits=args.bits)
        write_csv(rows, output_dir / "subbands.csv", "subbands")
    elif args.kind == "distributions":
        DistributionAnalyzer().report(model, output_dir / "distributions")
    else:
        rows = size_report(model)
        write_csv(rows, output_dir / "size.csv", "size")
        for row in rows:
            print(f"{row['item']}: {row['parameters']}")

    write_manifest(output_dir, {"command": f"report:{args.kind}", "bundle": str(args.bundle)})
    return 0


def cmd_ablate(args) -> int:
    """Variantes E1..E6, baseline dedicado ou todas em sequência"""
    config = load_run_config(args.config, args.overrides)
    if args.output_dir:
        config.output_dir = args.output_dir
    manager = DatasetManager(config.dataset, config.seed)

    tags = list(ABLATION_FLAGS) if args.exp == "all" else [args.exp]
    for tag in tags:
        if tag == "dedicated":
            dedicated_parity(config, manager)
        else:
            run_variant(config, tag, manager)
    write_manifest(config.output_dir, {"command": f"ablate:{args.exp}", "config": config.to_dict(),
                                       "force_bits_protocol": FORCE_BITS_PROTOCOL})
    return 0


def _bench_operands(size: int, bits: int, rng: np.random.Generator):
    if bits == 1:
        w = rng.choice([-1, 1], size=(size, size))
    else:
        low, high = packed.code_range(bits, signed=True)
        w = rng.integers(low, high + 1, size=(size, size))
    a = rng.integers(0, 2 ** bits, size=(size, size))
    return w, a


def verify_kernel(kernel: str, w_codes: np.ndarray, a_codes: np.ndarray, bits: int):
    """
    Compara o kernel com o oráculo inteiro antes de qualquer medição

    Raises:
        BenchmarkError: resultado divergente
    """
    reference = packed.integer_matmul_reference(w_codes, a_codes)
    if kernel == "float":
        result = torch.from_numpy(w_codes.astype(np.float32)) @ torch.from_numpy(a_codes.astype(np.float32)).t()
        exact = np.array_equal(result.numpy().astype(np.int64), reference)
    else:
        w = packed.pack(w_codes, bits, signed=True)
        a = packed.pack(a_codes, bits, signed=False)
        exact = np.array_equal(packed.packed_accumulate(w, a), reference)
    if not exact:
        raise BenchmarkError(f"kernel {kernel} divergiu do oráculo inteiro")


def cmd_bench(args) -> int:
    """Mede os kernels depois de verificar exatidão; grava bench.csv"""
    bits = {"packed1": 1, "packed2": 2, "float": 1}[args.kernel]
    rng = np.random.default_rng(args.seed)
    rows = []
    for size in args.sizes:
        w_codes, a_codes = _bench_operands(size, bits, rng)
        verify_kernel(args.kernel, w_codes, a_codes, bits)

        if args.kernel == "float":
            w_f = torch.from_numpy(w_codes.astype(np.float32))
            a_f = torch.from_numpy(a_codes.astype(np.float32))
            def run():
                return w_f @ a_f.t()
        else:
            w = packed.pack(w_codes, bits, signed=True)
            a = packed.pack(a_codes, bits, signed=False)
            def run():
                return packed.packed_accumulate(w, a)

        with Timer() as timer:
            for _ in range(args.reps):
                run()
        elapsed = timer.elapsed
        ops = size ** 3
        rows.append({
            "kernel": args.kernel, "size": size, "reps": args.reps,
            "ns_per_op": elapsed * 1e9 / (args.reps * ops),
            "gops": 2 * ops * args.reps / elapsed / 1e9,
        })
        print(f"{args.kernel} {size}^3: {rows[-1]['gops']:.3f} GOPS")

    output_dir = Path(args.output_dir or ".")
    write_csv(rows, output_dir / "bench.csv", "bench")
    return 0


def cmd_fetch(args) -> int:
    """Baixa MNIST ou CIFAR-10 com verificação de MD5"""
    path = fetch_dataset(args.dataset, args.dest)
    print(f"dataset.path: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msq", description=f"{AppConfig.APP_NAME} {AppConfig.VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="warmup + treinamento dinâmico")
    train.add_argument("--config", required=True)
    train.add_argument("--output-dir")
    train.add_argument("--checksum", action="store_true", help="grava SHA-256 do payload")
    train.set_defaults(handler=cmd_train)

    evaluate = sub.add_parser("eval", help="acurácia por bit-width")
    evaluate.add_argument("--bundle", required=True)
    evaluate.add_argument("--config")
    evaluate.add_argument("--bits", type=_bits_arg, default="all")
    evaluate.add_argument("--force-bits", type=int, action="append")
    evaluate.add_argument("--output-dir")
    evaluate.set_defaults(handler=cmd_eval)

    switch = sub.add_parser("switch", help="hot-swap e inferência")
    switch.add_argument("--bundle", required=True)
    switch.add_argument("--bits", type=int, nargs="+", required=True)
    switch.add_argument("--input", help="arquivo .npy (N, C, H, W)")
    switch.add_argument("--config")
    switch.add_argument("--samples", type=int, default=16)
    switch.add_argument("--export")
    switch.add_argument("--packed", action="store_true")
    switch.add_argument("--checksum", action="store_true")
    switch.set_defaults(handler=cmd_switch)

    report = sub.add_parser("report", help="relatórios de subbandas, distribuições e tamanho")
    report.add_argument("--bundle", required=True)
    report.add_argument("--kind", choices=["subbands", "distributions", "size"], required=True)
    report.add_argument("--nested", action="store_true")
    report.add_argument("--bits", type=int)
    report.add_argument("--config")
    report.add_argument("--output-dir")
    report.set_defaults(handler=cmd_report)

    ablate = sub.add_parser("ablate", help="variantes de ablação")
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--exp", choices=list(ABLATION_TAGS) + ["all"], required=True)
    ablate.add_argument("--output-dir")
    ablate.set_defaults(handler=cmd_ablate)

    bench = sub.add_parser("bench", help="benchmark dos kernels")
    bench.add_argument("--kernel", choices=["packed1", "packed2", "float"], required=True)
    bench.add_argument("--sizes", type=int, nargs="+", default=[512])
    bench.add_argument("--reps", type=int, default=3)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--output-dir")
    bench.set_defaults(handler=cmd_bench)

    fetch = sub.add_parser("fetch", help="download verificado de datasets")
    fetch.add_argument("--dataset", choices=["mnist", "cifar10"], required=True)
    fetch.add_argument("--dest", required=True)
    fetch.set_defaults(handler=cmd_fetch)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Ponto de entrada da CLI

    Returns:
        Código de saída (0 sucesso; 2 config; 3 dados; 4 numérico; 5 bundle;
        6 candidato; 7 benchmark)
    """
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        args.overrides = parse_overrides(extra)
        if args.overrides and args.command not in ("train", "ablate", "eval", "report", "switch"):
            raise ConfigError(f"'{args.command}' não aceita overrides")
        return args.handler(args)
    except MSQError as e:
        code = exit_code_for(e)
        logger.error(f"{args.command}: {e}")
        print(f"erro: {e}")
        return code
