"""eosmute command line: train, evaluate, sweep, transfer and defend."""
import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import torch

from . import __version__
from .attacks.artifacts import load_snippet, save_snippet, snippet_provenance
from .config.settings import settings
from .defences.dsp import defence_chain
from .harness.manifest import ExperimentData, load_manifest
from .harness.reports import emit_report
from .harness.runner import DefenceSpec, ExperimentRunner
from .harness.toy_corpus import MANIFEST_NAME, ToyCorpusConfig, write_toy_corpus
from .metrics.scoring import attack_power
from .schema.attack import TrainConfig
from .schema.audio import SnippetParams
from .schema.harness import SweepSpec
from .services.artifact_store import ArtifactStore
from .utils.file_utils import canonical_hash
from .utils.logging import setup_logging
from .victim.pretraining import PretrainConfig
from .victim.registry import get_model_registry

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("train-attack", "eval-attack", "sweep", "transfer", "defend", "make-toy-data")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from e


def _names(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _common_options() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", default="out", help="directory for snippets and reports")
    common.add_argument("--cache", default=settings.CACHE, help="snippet/checkpoint cache (env EOSMUTE_CACHE)")
    common.add_argument("--jobs", type=int, default=settings.JOBS, help="concurrent harness jobs")
    common.add_argument("--log-level", default=settings.LOG_LEVEL)
    common.add_argument("--log-dir", default=settings.LOG_DIR)
    common.add_argument("--max-tokens", type=int, default=settings.MAX_TOKENS)
    common.add_argument("--manifest", help="JSON-lines manifest; the toy corpus is used when absent")
    common.add_argument("--n-train", type=int, help="use only the first N training examples")
    common.add_argument("--n-val", type=int, help="use only the first N validation examples")
    common.add_argument("--n-test", type=int, help="use only the first N test examples")
    common.add_argument("--pretrain-epochs", type=int, default=PretrainConfig().epochs,
                        help="pre-training epochs for toy:<seed> models")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="report format")
    return common


def _attack_options() -> argparse.ArgumentParser:
    defaults = TrainConfig()
    attack = _Parser(add_help=False)
    attack.add_argument("--model", default="toy:42")
    attack.add_argument("--epsilon", type=float, default=0.02, help="l∞ bound (amplitude)")
    attack.add_argument("--length", type=float, default=0.64, help="snippet length (seconds)")
    attack.add_argument("--position", type=float, default=0.0, help="insert position (seconds)")
    attack.add_argument("--objective", choices=("complete", "partial"), default="complete")
    attack.add_argument("--delta", type=int, default=defaults.delta_horizon, help="partial-suppression horizon")
    attack.add_argument("--lr", type=float, default=defaults.learning_rate)
    attack.add_argument("--patience", type=int, default=defaults.patience)
    attack.add_argument("--min-delta", type=float, default=defaults.min_delta)
    attack.add_argument("--iterations", type=int, default=defaults.max_iterations)
    attack.add_argument("--time-limit", type=float, default=defaults.time_limit_seconds, help="seconds per snippet")
    attack.add_argument("--batch-size", type=int, default=defaults.batch_size)
    attack.add_argument("--weight-decay", type=float, default=defaults.weight_decay)
    attack.add_argument("--init", choices=("uniform", "zeros"), default=defaults.init_scheme)
    attack.add_argument("--prefix-mode", choices=("model", "reference"), default=defaults.prefix_mode)
    attack.add_argument("--seed", type=int, default=defaults.seed)
    return attack


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eosmute", description="Universal EOS-suppression attacks on ASR models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    common, attack = _common_options(), _attack_options()

    sub.add_parser("train-attack", parents=[common, attack], help="train a universal snippet")

    p = sub.add_parser("eval-attack", parents=[common, attack], help="evaluate a snippet on the test split")
    p.add_argument("--snippet", required=True, help="snippet .f32 file")

    p = sub.add_parser("sweep", parents=[common, attack], help="sweep epsilon, length, position or cutoff_hz")
    p.add_argument("--param", required=True, choices=("epsilon", "length", "position", "cutoff_hz"))
    p.add_argument("--values", required=True, type=_floats)
    p.add_argument("--models", type=_names, help="comma-separated model specs (default: --model)")
    p.add_argument("--order", type=int, default=5, help="Butterworth order for cutoff_hz sweeps")
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--baseline-seed", type=int, default=0)

    p = sub.add_parser("transfer", parents=[common, attack], help="surrogate -> victim transfer matrix")
    p.add_argument("--surrogates", type=_names, help="comma-separated model specs (default: --model)")
    p.add_argument("--victims", type=_names, help="comma-separated model specs (default: surrogates)")

    p = sub.add_parser("defend", parents=[common, attack], help="retained attack power under defences")
    p.add_argument("--snippet", help="snippet .f32 file (trained with the attack options when absent)")
    p.add_argument("--chain", action="append", default=[],
                   help="defence chain, e.g. 'mu_compress,mu_expand' or 'butterworth:cutoff_hz=7000'")
    p.add_argument("--chain-json", action="append", default=[],
                   help='JSON chain, e.g. \'[{"name":"butterworth","cutoff_hz":7000,"order":5}]\'')
    p.add_argument("--cutoffs", type=_floats, help="comma-separated low-pass cutoffs (Hz)")
    p.add_argument("--order", type=int, default=5)

    p = sub.add_parser("make-toy-data", parents=[common], help="write the synthetic toy corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab-size", type=int, default=16)
    return parser


# -- helpers -------------------------------------------------------------------

def _snippet_params(args) -> SnippetParams:
    return SnippetParams(epsilon=args.epsilon, length_seconds=args.length, position_seconds=args.position)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        patience=args.patience,
        min_delta=args.min_delta,
        max_iterations=args.iterations,
        time_limit_seconds=args.time_limit,
        batch_size=args.batch_size,
        delta_horizon=args.delta,
        seed=args.seed,
        weight_decay=args.weight_decay,
        init_scheme=args.init,
        prefix_mode=args.prefix_mode,
    )


def _runner(args) -> ExperimentRunner:
    registry = get_model_registry(args.cache, args.pretrain_epochs)
    return ExperimentRunner(registry, registry.store, jobs=args.jobs, max_tokens=args.max_tokens)


def _experiment_data(args, store: ArtifactStore) -> ExperimentData:
    if args.manifest:
        manifest = load_manifest(args.manifest)
    else:
        corpus = ToyCorpusConfig()
        directory = store.corpus_dir / canonical_hash(corpus.model_dump())
        if (directory / MANIFEST_NAME).is_file():
            manifest = load_manifest(directory / MANIFEST_NAME)
        else:
            manifest = write_toy_corpus(directory, corpus)
    limits = {"train": args.n_train, "validation": args.n_val, "test": args.n_test}
    return ExperimentData.from_manifest(manifest, {k: v for k, v in limits.items() if v is not None})


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print(line: str):
    print(line, flush=True)


def _fmt(value: Optional[float]) -> str:
    return "undefined" if value is None else f"{value:.6g}"


# -- subcommands ----------------------------------------------------------------

def cmd_train_attack(args) -> int:
    runner = _runner(args)
    data = _experiment_data(args, runner.store)
    model = runner.registry.resolve(args.model)
    obtained = runner.obtain_snippet(model, _snippet_params(args), _train_config(args), args.objective, data)
    snippet = obtained["snippet"]
    path, digest = save_snippet(snippet, _out(args) / "snippet")

    _print(f"snippet {path} sha256={digest}")
    _print(f"model {snippet.trained_on}")
    _print(f"linf {_fmt(snippet.linf)} (epsilon {snippet.params.epsilon:g})")
    _print(f"iterations {len(snippet.history)}")
    val_losses = [h.val_loss for h in snippet.history if h.val_loss is not None]
    _print(f"best_val_loss {_fmt(min(val_losses) if val_losses else None)}")
    return 0


def cmd_eval_attack(args) -> int:
    from .harness.evaluation import evaluate

    runner = _runner(args)
    data = _experiment_data(args, runner.store)
    model = runner.registry.resolve(args.model)
    snippet = load_snippet(args.snippet)
    attacked = evaluate(model, data.test, snippet, None, args.max_tokens)
    clean = evaluate(model, data.test, None, None, args.max_tokens)
    alpha = attack_power(attacked, clean)

    payload = {"model": model.identity, "snippet": str(args.snippet), "attacked": attacked.model_dump(),
               "clean": clean.model_dump(), "alpha": alpha.model_dump()}
    (_out(args) / "eval.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for metric, value in attacked.as_dict().items():
        _print(f"{metric} attacked={_fmt(value)} clean={_fmt(getattr(clean, metric))} alpha={_fmt(getattr(alpha, metric))}")
    return 0


def cmd_sweep(args) -> int:
    runner = _runner(args)
    data = _experiment_data(args, runner.store)
    spec = SweepSpec(
        parameter=args.param,
        values=args.values,
        params=_snippet_params(args),
        train=_train_config(args),
        objective=args.objective,
        models=args.models or [args.model],
        order=args.order,
        baseline=not args.no_baseline,
        baseline_seed=args.baseline_seed,
        max_tokens=args.max_tokens,
    )
    report = asyncio.run(runner.run_sweep(spec, data))
    path = emit_report(report, _out(args) / f"sweep_{args.param}.{args.format}", args.format)

    _print(f"report {path}")
    for series in report.series():
        for metric in ("empty_rate", "asl", "bleu", "wer"):
            values = []
            for column in range(len(report.values)):
                cell = report.cell(series, column)
                values.append(_fmt(getattr(cell.metrics, metric)) if cell and cell.metrics else "error")
            _print(f"{metric} [{series}] " + " ".join(values))
    return 1 if any(c.provenance.error for c in report.cells) else 0


def cmd_transfer(args) -> int:
    runner = _runner(args)
    data = _experiment_data(args, runner.store)
    surrogates = args.surrogates or [args.model]
    victims = args.victims or surrogates
    report = asyncio.run(runner.transfer_matrix(surrogates, victims, _snippet_params(args),
                                                _train_config(args), args.objective, data, args.max_tokens))
    path = emit_report(report, _out(args) / f"transfer.{args.format}", args.format)

    _print(f"report {path}")
    for cell in report.cells:
        values = cell.metrics.as_dict() if cell.metrics else {}
        for metric in ("empty_rate", "asl", "bleu", "wer"):
            _print(f"{metric} [{cell.attack}] {cell.surrogate}->{cell.victim} {_fmt(values.get(metric))}")
    return 1 if any(c.provenance.error for c in report.cells) else 0


def _chains(args) -> List[DefenceSpec]:
    chains: List[DefenceSpec] = [*args.chain, *args.chain_json]
    for cutoff in args.cutoffs or []:
        chains.append(defence_chain(["butterworth"], [{"cutoff_hz": cutoff, "order": args.order}],
                                    label=f"{cutoff:g}Hz"))
    return chains


def cmd_defend(args) -> int:
    runner = _runner(args)
    chains = _chains(args)
    data = _experiment_data(args, runner.store)
    if args.snippet:
        snippet = load_snippet(args.snippet)
        provenance = snippet_provenance(args.snippet, snippet)
    else:
        model = runner.registry.resolve(args.model)
        obtained = runner.obtain_snippet(model, _snippet_params(args), _train_config(args), args.objective, data)
        snippet, provenance = obtained["snippet"], obtained["provenance"]

    table = asyncio.run(runner.defence_eval(snippet, chains, args.model, data, provenance, args.max_tokens))
    path = emit_report(table, _out(args) / f"defence.{args.format}", args.format)

    _print(f"report {path}")
    for report in table.reports:
        if report.error:
            _print(f"error [{report.defence}] {report.error}")
            continue
        for metric in ("empty_rate", "asl", "bleu", "wer"):
            _print(f"alpha_pct {metric} [{report.defence}] {_fmt(report.alpha_pct.get(metric))}")
    return 1 if any(r.error for r in table.reports) else 0


def cmd_make_toy_data(args) -> int:
    cfg = ToyCorpusConfig(
        seed=args.seed,
        vocab_size=args.vocab_size,
        **{k: v for k, v in {"n_train": args.n_train, "n_validation": args.n_val, "n_test": args.n_test}.items()
           if v is not None},
    )
    manifest = write_toy_corpus(_out(args), cfg)
    _print(f"manifest {Path(args.out) / MANIFEST_NAME}")
    for split, count in manifest.split_counts().items():
        _print(f"{split} {count}")
    return 0


COMMANDS = {
    "train-attack": cmd_train_attack,
    "eval-attack": cmd_eval_attack,
    "sweep": cmd_sweep,
    "transfer": cmd_transfer,
    "defend": cmd_defend,
    "make-toy-data": cmd_make_toy_data,
}


def _fail(error: Exception, kind: str) -> None:
    print(json.dumps({"error": str(error), "kind": kind}), file=sys.stderr, flush=True)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Execute one invocation; 0 on success, 2 on usage errors, 1 on runtime failures"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing subcommand; choose one of {', '.join(SUBCOMMANDS)}")
    except UsageError as e:
        _fail(e, "usage")
        return 2
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level, args.log_dir)
    if settings.TORCH_THREADS:
        torch.set_num_threads(settings.TORCH_THREADS)
    try:
        return COMMANDS[args.command](args)
    except Exception as e:
        logger.exception(f"{args.command} failed")
        _fail(e, type(e).__name__)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
