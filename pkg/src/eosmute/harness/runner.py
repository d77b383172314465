"""Schedules sweep cells, transfer matrices and defence evaluations as independent jobs."""
import asyncio
import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from ..attacks.trainer import train_attack
from ..defences.dsp import FILTER_MODE, DefenceChain, chain_from_config, defence_chain, parse_chain_spec
from ..errors import EosmuteError
from ..metrics.scoring import BLEU_NOTE, attack_power, retained_power
from ..schema.attack import AttackSnippet, ObjectiveKind, TrainConfig
from ..schema.audio import SnippetParams
from ..schema.harness import (
    DefenceTable,
    Provenance,
    SweepCell,
    SweepReport,
    SweepSpec,
    TransferCell,
    TransferReport,
)
from ..schema.metrics import DefenceReport
from ..services.artifact_store import ArtifactStore
from ..utils.file_utils import canonical_hash
from ..utils.logging import get_run_logger
from ..victim.base import VictimModel
from ..victim.registry import ModelRegistry
from .evaluation import baseline_random_snippet, evaluate
from .jobs import BaseJob, CallableJob
from .manifest import ExperimentData

logger = logging.getLogger(__name__)

NO_ATTACK = "no_attack"

_PARAM_FIELDS = {
    "epsilon": "epsilon",
    "length": "length_seconds",
    "position": "position_seconds",
}

# compact text specs and JSON configs are parsed inside their job so a bad one fails only its own row
DefenceSpec = Union[DefenceChain, str, List[Dict[str, Any]]]


def baseline_series(model_spec: str) -> str:
    return f"baseline {model_spec}"


class ExperimentRunner:
    def __init__(self, registry: ModelRegistry, store: ArtifactStore, jobs: int = 1, max_tokens: int = 224):
        self.registry = registry
        self.store = store
        self.jobs = max(1, jobs)
        self.max_tokens = max_tokens

    # -- snippets -----------------------------------------------------------

    def snippet_key(self, model: VictimModel, params: SnippetParams, cfg: TrainConfig,
                    objective: ObjectiveKind, data: ExperimentData) -> str:
        return canonical_hash({
            "model": model.identity,
            "params": params.model_dump(),
            "config": cfg.model_dump(),
            "objective": objective,
            "data": data.fingerprint(),
        })

    def _relative(self, path: Path) -> str:
        try:
            return Path(path).resolve().relative_to(self.store.cache_dir.resolve()).as_posix()
        except ValueError:
            return str(path)

    def obtain_snippet(self, model: VictimModel, params: SnippetParams, cfg: TrainConfig,
                       objective: ObjectiveKind, data: ExperimentData) -> Dict[str, Any]:
        """Trained snippet for this configuration, from the cache when present"""
        key = self.snippet_key(model, params, cfg, objective, data)
        cached = self.store.get_snippet(key)
        if cached is None:
            with self.registry.training_lock(model):
                cached = self.store.get_snippet(key)
                if cached is None:
                    snippet = train_attack(model, data.train, data.validation, params, cfg, objective)
                    path, digest = self.store.put_snippet(key, snippet)
                    cached = (snippet, path, digest)
        snippet, path, digest = cached
        return {
            "snippet": snippet,
            "provenance": Provenance(seed=cfg.seed, config_hash=key,
                                     snippet_file=self._relative(path), snippet_digest=digest),
        }

    def obtain_baseline(self, params: SnippetParams, seed: int, sample_rate: int) -> Dict[str, Any]:
        key = "baseline-" + canonical_hash({"params": params.model_dump(), "seed": seed, "sample_rate": sample_rate})
        cached = self.store.get_snippet(key)
        if cached is None:
            snippet = baseline_random_snippet(params, seed, sample_rate)
            path, digest = self.store.put_snippet(key, snippet)
            cached = (snippet, path, digest)
        snippet, path, digest = cached
        return {
            "snippet": snippet,
            "provenance": Provenance(seed=seed, config_hash=key,
                                     snippet_file=self._relative(path), snippet_digest=digest),
        }

    # -- scheduling ---------------------------------------------------------

    async def _gather(self, jobs: Sequence[BaseJob]) -> List[Dict[str, Any]]:
        """Run jobs at most self.jobs at a time; outcomes keep the submission order"""
        semaphore = asyncio.Semaphore(self.jobs)

        async def guarded(job: BaseJob) -> Dict[str, Any]:
            async with semaphore:
                return await job.run()

        return list(await asyncio.gather(*(guarded(job) for job in jobs)))

    def _notes(self, model_specs: Sequence[str], objective: Optional[str], delta: Optional[int],
               data: ExperimentData) -> List[str]:
        notes = ["decoding: greedy argmax, no beam search or temperature fallback"]
        for spec in model_specs:
            try:
                model = self.registry.resolve(spec)
            except Exception:
                continue
            notes.append(
                f"model {spec} = {model.identity}: consumes the first "
                f"{model.frontend.chunk_seconds:g} s of each input, zero-padded"
            )
        notes.append(f"defence filters: {FILTER_MODE} (forward-only IIR)")
        notes.append(BLEU_NOTE)
        if objective is not None:
            notes.append(f"objective: {objective}, delta horizon {delta}")
        sizes = data.sizes()
        notes.append(
            f"data: train {sizes['train']}, validation {sizes['validation']}, "
            f"test {sizes['test']} (fingerprint {data.fingerprint()})"
        )
        return notes

    # -- sweeps -------------------------------------------------------------

    def _cell_setup(self, spec: SweepSpec, value: float):
        if spec.parameter == "cutoff_hz":
            chain = defence_chain(["butterworth"], [{"cutoff_hz": value, "order": spec.order}])
            return spec.params, chain
        field = _PARAM_FIELDS[spec.parameter]
        return SnippetParams(**{**spec.params.model_dump(), field: value}), None

    async def _sweep_cell(self, spec: SweepSpec, model_spec: str, value: float,
                          data: ExperimentData, baseline: bool) -> Dict[str, Any]:
        def work() -> Dict[str, Any]:
            model = self.registry.resolve(model_spec)
            params, defence = self._cell_setup(spec, value)
            if baseline:
                obtained = self.obtain_baseline(params, spec.baseline_seed, model.frontend.sample_rate)
            else:
                obtained = self.obtain_snippet(model, params, spec.train, spec.objective, data)
            metrics = evaluate(model, data.test, obtained["snippet"], defence, spec.max_tokens)
            return {"metrics": metrics, "provenance": obtained["provenance"]}

        return await asyncio.to_thread(work)

    async def run_sweep(self, spec: SweepSpec, data: ExperimentData) -> SweepReport:
        """One trained cell per (model, value) plus random-snippet baseline cells"""
        run_logger = get_run_logger(f"sweep.{spec.parameter}")
        run_logger.log_execution_start(spec.model_dump())
        started = time.monotonic()

        layout = []
        for baseline in ([False, True] if spec.baseline else [False]):
            for model_spec in spec.models:
                series = baseline_series(model_spec) if baseline else model_spec
                for column, value in enumerate(spec.values):
                    layout.append((series, model_spec, column, value, baseline))

        jobs = [
            CallableJob(f"sweep.{series}.{spec.parameter}[{column}]={value:g}",
                        self._sweep_cell, spec, model_spec, value, data, baseline)
            for series, model_spec, column, value, baseline in layout
        ]
        outcomes = await self._gather(jobs)

        cells = []
        for (series, model_spec, column, value, baseline), outcome in zip(layout, outcomes):
            if outcome["success"]:
                cells.append(SweepCell(series=series, model=model_spec, column=column, value=value,
                                       metrics=outcome["metrics"], provenance=outcome["provenance"]))
            else:
                seed = spec.baseline_seed if baseline else spec.train.seed
                cells.append(SweepCell(series=series, model=model_spec, column=column, value=value,
                                       provenance=Provenance(seed=seed, error=outcome["error"])))
                run_logger.log_error(RuntimeError(outcome["error"]), {"series": series, "value": value})

        delta = spec.train.delta_horizon if spec.objective == "partial" else 1
        report = SweepReport(parameter=spec.parameter, values=list(spec.values), cells=cells,
                             notes=self._notes(spec.models, spec.objective, delta, data))
        failed = sum(1 for c in cells if c.provenance.error)
        run_logger.log_execution_end({"cells": len(cells), "failed": failed},
                                     time.monotonic() - started)
        return report

    # -- transferability ----------------------------------------------------

    async def _train_for(self, model_spec: str, params: SnippetParams, cfg: TrainConfig,
                         objective: ObjectiveKind, data: ExperimentData) -> Dict[str, Any]:
        def work():
            model = self.registry.resolve(model_spec)
            return self.obtain_snippet(model, params, cfg, objective, data)

        return await asyncio.to_thread(work)

    async def _evaluate_on(self, model_spec: str, data: ExperimentData, snippet: Optional[AttackSnippet],
                           defence: Optional[DefenceChain], max_tokens: int) -> Dict[str, Any]:
        def work():
            model = self.registry.resolve(model_spec)
            return {"metrics": evaluate(model, data.test, snippet, defence, max_tokens)}

        return await asyncio.to_thread(work)

    async def transfer_matrix(self, surrogates: Sequence[str], victims: Sequence[str],
                              params: SnippetParams, cfg: TrainConfig, objective: ObjectiveKind,
                              data: ExperimentData, max_tokens: Optional[int] = None) -> TransferReport:
        """Train one snippet per surrogate and evaluate it on every victim"""
        max_tokens = max_tokens or self.max_tokens
        trained = await self._gather([
            CallableJob(f"transfer.train.{s}", self._train_for, s, params, cfg, objective, data)
            for s in surrogates
        ])
        clean = await self._gather([
            CallableJob(f"transfer.clean.{v}", self._evaluate_on, v, data, None, None, max_tokens)
            for v in victims
        ])

        pairs = [(s, v) for s in surrogates for v in victims]
        attacked_jobs = []
        for s, v in pairs:
            snip = trained[surrogates.index(s)]
            if snip["success"]:
                attacked_jobs.append(CallableJob(f"transfer.eval.{s}->{v}", self._evaluate_on, v, data,
                                                 snip["snippet"], None, max_tokens))
            else:
                attacked_jobs.append(_FailedJob(f"transfer.eval.{s}->{v}", snip["error"]))
        attacked = await self._gather(attacked_jobs)

        cells: List[TransferCell] = []
        for s, v in pairs:
            outcome = clean[list(victims).index(v)]
            cells.append(TransferCell(
                attack=NO_ATTACK, surrogate=s, victim=v,
                metrics=outcome.get("metrics"),
                provenance=Provenance(error=outcome.get("error")),
            ))
        for (s, v), outcome in zip(pairs, attacked):
            snip = trained[surrogates.index(s)]
            provenance = snip["provenance"] if snip["success"] else Provenance(seed=cfg.seed)
            cells.append(TransferCell(
                attack=objective, surrogate=s, victim=v,
                metrics=outcome.get("metrics"),
                provenance=provenance.model_copy(update={"error": outcome.get("error")}),
            ))

        delta = cfg.delta_horizon if objective == "partial" else 1
        models = list(dict.fromkeys([*surrogates, *victims]))
        return TransferReport(surrogates=list(surrogates), victims=list(victims), objective=objective,
                              cells=cells, notes=self._notes(models, objective, delta, data))

    # -- defences -----------------------------------------------------------

    async def _defence_cell(self, model_spec: str, snippet: AttackSnippet, defence: DefenceSpec,
                            data: ExperimentData, max_tokens: int) -> Dict[str, Any]:
        def work():
            chain = _resolve_chain(defence)
            model = self.registry.resolve(model_spec)
            return {
                "chain": chain,
                "attacked": evaluate(model, data.test, snippet, chain, max_tokens),
                "clean": evaluate(model, data.test, None, chain, max_tokens),
            }

        return await asyncio.to_thread(work)

    async def defence_eval(self, snippet: AttackSnippet, defences: Sequence[DefenceSpec], model_spec: str,
                           data: ExperimentData, provenance: Optional[Provenance] = None,
                           max_tokens: Optional[int] = None) -> DefenceTable:
        """α_d and α_% for every chain; the identity chain supplies α_base and always comes first"""
        max_tokens = max_tokens or self.max_tokens
        chains: List[DefenceSpec] = [_settle(d) for d in defences]
        if not any(isinstance(c, DefenceChain) and c.is_identity for c in chains):
            chains.insert(0, DefenceChain())
        else:
            identity = next(c for c in chains if isinstance(c, DefenceChain) and c.is_identity)
            chains.remove(identity)
            chains.insert(0, identity)

        outcomes = await self._gather([
            CallableJob(f"defence.{_label(c)}", self._defence_cell, model_spec, snippet, c, data, max_tokens)
            for c in chains
        ])

        base = outcomes[0]
        alpha_base = attack_power(base["attacked"], base["clean"]) if base["success"] else None
        reports = []
        for chain, outcome in zip(chains, outcomes):
            label = _label(chain)
            if not outcome["success"]:
                reports.append(DefenceReport(defence=label, error=outcome["error"]))
                continue
            description = outcome["chain"].describe()
            if alpha_base is None:
                reports.append(DefenceReport(defence=label, attacked=outcome["attacked"], clean=outcome["clean"],
                                             description=description, error=f"identity evaluation failed: {base['error']}"))
                continue
            alpha_d = attack_power(outcome["attacked"], outcome["clean"])
            reports.append(DefenceReport(
                defence=label,
                attacked=outcome["attacked"],
                clean=outcome["clean"],
                alpha_base=alpha_base,
                alpha_d=alpha_d,
                alpha_pct=retained_power(alpha_d, alpha_base),
                description=description,
            ))

        delta = snippet.delta_horizon if snippet.objective else None
        return DefenceTable(model=model_spec, reports=reports, provenance=provenance or Provenance(),
                            notes=self._notes([model_spec], snippet.objective, delta, data))


def _resolve_chain(defence: DefenceSpec) -> DefenceChain:
    if isinstance(defence, DefenceChain):
        return defence
    if isinstance(defence, str) and not defence.lstrip().startswith("["):
        return parse_chain_spec(defence)
    return chain_from_config(defence)


def _settle(defence: DefenceSpec) -> DefenceSpec:
    """A text spec becomes its chain when valid; anything else is left for its job to build"""
    if not isinstance(defence, str):
        return defence
    try:
        return _resolve_chain(defence)
    except EosmuteError:
        return defence


def _label(chain: DefenceSpec) -> str:
    if isinstance(chain, DefenceChain):
        return chain.label
    if isinstance(chain, str):
        return chain.strip() or "identity"
    return "+".join(str(step.get("name", "?")) if isinstance(step, dict) else "?" for step in chain) or "identity"


class _FailedJob(BaseJob):
    """Placeholder for a cell whose prerequisite already failed"""

    def __init__(self, job_name: str, error: str):
        super().__init__(job_name)
        self.error = error

    async def execute(self) -> Dict[str, Any]:
        raise RuntimeError(f"prerequisite failed: {self.error}")
