import json
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from eosmute.defences.dsp import DefenceChain, parse_chain_spec
from eosmute.errors import ConfigurationError, ManifestError
from eosmute.harness.evaluation import baseline_random_snippet, evaluate, prepare_inputs
from eosmute.harness.jobs import BaseJob, CallableJob
from eosmute.harness.manifest import ExperimentData, load_examples, load_manifest
from eosmute.harness.reports import emit_report, load_report
from eosmute.harness.runner import NO_ATTACK, ExperimentRunner, baseline_series
from eosmute.harness.toy_corpus import MANIFEST_NAME, ToyCorpusConfig, generate_toy_corpus, write_toy_corpus
from eosmute.metrics.scoring import attack_power, retained_power
from eosmute.schema.attack import AttackSnippet, TrainConfig
from eosmute.schema.audio import SnippetParams
from eosmute.schema.harness import Provenance, SweepSpec
from eosmute.services.artifact_store import ArtifactStore
from eosmute.victim.registry import ModelRegistry
from eosmute.victim.toy import make_toy_model, make_vocabulary

from .conftest import SMALL_CONFIG, SMALL_CORPUS, TriggerVictim, silent_examples

FIXTURES = Path(__file__).parent / "fixtures"

FAST_TRAIN = TrainConfig(max_iterations=1, batch_size=4)
SHORT_SNIPPET = SnippetParams(epsilon=0.02, length_seconds=0.1)


def _small_runner(cache: Path, jobs: int = 1) -> ExperimentRunner:
    store = ArtifactStore(cache)
    registry = ModelRegistry(store=store, model_config=SMALL_CONFIG)
    registry.register("small:0", make_toy_model(0, SMALL_CONFIG.vocab_size, SMALL_CONFIG))
    registry.register("small:1", make_toy_model(1, SMALL_CONFIG.vocab_size, SMALL_CONFIG))
    return ExperimentRunner(registry, store, jobs=jobs, max_tokens=4)


def _trigger_data() -> ExperimentData:
    return ExperimentData(silent_examples(2, "train"), silent_examples(2, "validation"), silent_examples(4))


def _loud_snippet() -> AttackSnippet:
    return AttackSnippet(samples=np.full(160, 0.02), params=SnippetParams(epsilon=0.02, length_seconds=0.01))


class TestToyCorpus:
    def test_deterministic(self):
        first, second = generate_toy_corpus(SMALL_CORPUS), generate_toy_corpus(SMALL_CORPUS)
        assert [ex.text for ex in first] == [ex.text for ex in second]
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.waveform.samples, b.waveform.samples)

    def test_splits_and_transcripts(self, toy_examples):
        assert [ex.split for ex in toy_examples] == ["train"] * 8 + ["validation"] * 4 + ["test"] * 6
        vocab = make_vocabulary(8)
        for ex in toy_examples:
            assert 2 <= len(vocab.encode(ex.text)) <= 6
            assert ex.waveform.in_range()
            assert ex.waveform.duration_seconds < SMALL_CONFIG.frontend.chunk_seconds

    def test_tones_must_stay_below_nyquist(self):
        ToyCorpusConfig(vocab_size=39)
        with pytest.raises(ValidationError):
            ToyCorpusConfig(vocab_size=40)
        with pytest.raises(ValidationError):
            ToyCorpusConfig(min_tokens=4, max_tokens=3)

    def test_written_corpus_loads_back(self, tmp_path, toy_examples):
        manifest = write_toy_corpus(tmp_path / "toy", SMALL_CORPUS)
        assert (tmp_path / "toy" / MANIFEST_NAME).is_file()
        assert manifest.split_counts() == {"train": 8, "validation": 4, "test": 6}

        loaded = load_manifest(tmp_path / "toy" / MANIFEST_NAME)
        assert loaded.split_counts() == manifest.split_counts()
        data = ExperimentData.from_manifest(loaded, {"train": 3})
        assert data.sizes() == {"train": 3, "validation": 4, "test": 6}
        assert data.test[0].text == toy_examples[12].text
        np.testing.assert_allclose(data.test[0].waveform.samples, toy_examples[12].waveform.samples,
                                   atol=2.0 / 2 ** 15)
        assert data.fingerprint() == ExperimentData.from_manifest(loaded, {"train": 3}).fingerprint()
        assert data.fingerprint() != ExperimentData.from_manifest(loaded).fingerprint()


class TestManifest:
    def test_reports_every_offending_line(self, tmp_path):
        (tmp_path / "a.wav").write_bytes(b"")
        lines = [
            json.dumps({"audio": "a.wav", "text": "alfa", "split": "train"}),
            "{not json",
            json.dumps({"audio": "a.wav", "split": "train"}),
            json.dumps({"audio": "missing.wav", "text": "alfa", "split": "test"}),
            json.dumps({"audio": "a.wav", "text": "alfa", "split": "dev"}),
        ]
        path = tmp_path / "manifest.jsonl"
        path.write_text("\n".join(lines) + "\n")

        with pytest.raises(ManifestError) as info:
            load_manifest(path)
        assert [item["line"] for item in info.value.offending] == [2, 3, 4, 5]
        assert "missing.wav" in info.value.offending[2]["path"]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "absent.jsonl")

    def test_empty_split(self, tmp_path):
        manifest = write_toy_corpus(tmp_path, ToyCorpusConfig(vocab_size=8, n_train=2, n_validation=0, n_test=1))
        with pytest.raises(ConfigurationError):
            load_examples(manifest, "validation")
        assert len(load_examples(manifest, "train")) == 2


class _Boom(BaseJob):
    async def execute(self):
        raise ValueError("boom")


class TestJobs:
    @pytest.mark.asyncio
    async def test_failure_is_returned_as_data(self):
        outcome = await _Boom("boom").run()
        assert outcome == {"error": "ValueError: boom", "success": False}

    @pytest.mark.asyncio
    async def test_callable_job(self):
        async def work(x, y=0):
            return {"total": x + y}

        assert await CallableJob("add", work, 2, y=3).run() == {"total": 5, "success": True}


class TestEvaluation:
    def test_clean_and_attacked(self, trigger_victim):
        examples = silent_examples(4)
        clean = evaluate(trigger_victim, examples)
        assert (clean.empty_rate, clean.asl, clean.wer) == (0.0, 2.0, 0.0)
        assert clean.bleu == pytest.approx(1.0)

        attacked = evaluate(trigger_victim, examples, _loud_snippet())
        assert (attacked.empty_rate, attacked.asl, attacked.bleu, attacked.wer) == (1.0, 0.0, 0.0, 1.0)
        assert attacked.n_examples == 4

    def test_random_baseline_snippet(self):
        a = baseline_random_snippet(SnippetParams(), seed=0)
        assert a.within_bound()
        assert a.objective is None
        assert len(a) == 10240

    def test_prepare_inputs(self):
        examples = silent_examples(2, seconds=0.5)
        defence = parse_chain_spec("mu_compress")
        waves = prepare_inputs(examples, _loud_snippet(), defence)
        assert [len(w) for w in waves] == [8160, 8160]
        assert waves[0].samples[0] == pytest.approx(0.3260, abs=1e-3)


class TestRunner:
    @pytest.mark.asyncio
    async def test_epsilon_sweep_layout(self, tmp_path, toy_data):
        runner = _small_runner(tmp_path / "cache")
        spec = SweepSpec(parameter="epsilon", values=[0.01, 0.02], params=SHORT_SNIPPET, train=FAST_TRAIN,
                         models=["small:0"], max_tokens=4)
        report = await runner.run_sweep(spec, toy_data)

        assert report.series() == ["small:0", baseline_series("small:0")]
        assert len(report.cells) == 4
        for cell in report.cells:
            assert cell.provenance.error is None
            assert cell.metrics.n_examples == 6
            assert cell.provenance.snippet_file.startswith("snippets/")
            assert (tmp_path / "cache" / cell.provenance.snippet_file).is_file()
        assert report.cell("small:0", 1).value == 0.02
        assert any("greedy" in note for note in report.notes)

    @pytest.mark.asyncio
    async def test_sweep_is_reproducible(self, tmp_path, toy_data):
        spec = SweepSpec(parameter="position", values=[0.0, 0.1], params=SHORT_SNIPPET, train=FAST_TRAIN,
                         models=["small:0"], max_tokens=4)
        paths = []
        for name, jobs in (("a", 1), ("b", 2)):
            runner = _small_runner(tmp_path / name, jobs=jobs)
            report = await runner.run_sweep(spec, toy_data)
            paths.append(emit_report(report, tmp_path / f"{name}.csv"))
        assert paths[0].read_bytes() == paths[1].read_bytes()

        # a second run on a warm cache reproduces the same table
        again = await _small_runner(tmp_path / "a").run_sweep(spec, toy_data)
        assert emit_report(again, tmp_path / "again.csv").read_bytes() == paths[0].read_bytes()

    @pytest.mark.asyncio
    async def test_cutoff_sweep_applies_filters(self, tmp_path, toy_data):
        runner = _small_runner(tmp_path / "cache")
        spec = SweepSpec(parameter="cutoff_hz", values=[4000.0, 7000.0], params=SHORT_SNIPPET, train=FAST_TRAIN,
                         models=["small:0"], baseline=False, max_tokens=4)
        report = await runner.run_sweep(spec, toy_data)
        assert report.series() == ["small:0"]
        assert all(c.metrics is not None for c in report.cells)
        # one trained snippet serves every cutoff
        assert len({c.provenance.snippet_digest for c in report.cells}) == 1
        assert any("causal" in note for note in report.notes)

    @pytest.mark.asyncio
    async def test_failing_cells_do_not_stop_the_sweep(self, tmp_path, toy_data):
        runner = _small_runner(tmp_path / "cache")

        def broken(argument):
            raise RuntimeError(f"cannot build {argument}")

        runner.registry.register_factory("broken", broken)
        spec = SweepSpec(parameter="epsilon", values=[0.02], params=SHORT_SNIPPET, train=FAST_TRAIN,
                         models=["small:0", "broken:1"], baseline=False, max_tokens=4)
        report = await runner.run_sweep(spec, toy_data)

        assert report.cell("small:0", 0).metrics is not None
        failed = report.cell("broken:1", 0)
        assert failed.metrics is None
        assert "cannot build 1" in failed.provenance.error

        header, *rows = emit_report(report, tmp_path / "r.csv").read_text().splitlines()
        assert header.split(",")[:2] == ["epsilon", "series"]
        assert any(row.startswith("error,broken:1,") and "cannot build" in row for row in rows)

    @pytest.mark.asyncio
    async def test_transfer_matrix(self, tmp_path, toy_data):
        runner = _small_runner(tmp_path / "cache", jobs=2)
        models = ["small:0", "small:1"]
        report = await runner.transfer_matrix(models, models, SHORT_SNIPPET, FAST_TRAIN, "complete", toy_data)

        assert len(report.cells) == 8
        assert [c.attack for c in report.cells[:4]] == [NO_ATTACK] * 4
        for victim in models:
            assert report.cell(NO_ATTACK, "small:0", victim).metrics == report.cell(NO_ATTACK, "small:1", victim).metrics
        for surrogate in models:
            cell = report.cell("complete", surrogate, surrogate)
            assert cell.provenance.snippet_digest
            assert cell.metrics.n_examples == 6

        loaded = load_report(emit_report(report, tmp_path / "transfer.csv"))
        assert loaded.surrogates == models
        assert loaded.cell("complete", "small:0", "small:1").metrics == report.cell(
            "complete", "small:0", "small:1").metrics

    @pytest.mark.asyncio
    async def test_defence_table(self, tmp_path):
        runner = _small_runner(tmp_path / "cache", jobs=2)
        runner.registry.register("trigger", TriggerVictim())
        defences = [
            parse_chain_spec("mu_compress"),
            DefenceChain(),
            [{"name": "butterworth", "cutoff_hz": 9000}],
            parse_chain_spec("mu_compress,mu_expand"),
            "mu_compress,bogus",
        ]
        table = await runner.defence_eval(_loud_snippet(), defences, "trigger", _trigger_data(), max_tokens=4)

        assert [r.defence for r in table.reports] == [
            "identity", "mu_compress", "butterworth", "mu_compress+mu_expand", "mu_compress,bogus"]
        assert "unknown defence 'bogus'" in table.report("mu_compress,bogus").error
        assert any(note.startswith("bleu:") for note in table.notes)
        identity = table.report("identity")
        assert identity.alpha_pct == {"empty_rate": 100.0, "asl": 100.0, "bleu": 100.0, "wer": 100.0}
        assert identity.alpha_base == attack_power(identity.attacked, identity.clean)
        assert table.report("mu_compress").alpha_pct["empty_rate"] == 100.0
        assert "Nyquist" in table.report("butterworth").error
        assert table.report("mu_compress+mu_expand").description["filter_mode"] == "causal"

        loaded = load_report(emit_report(table, tmp_path / "defence.csv"))
        assert loaded.report("identity").alpha_pct["asl"] == 100.0
        assert loaded.report("butterworth").error
        assert loaded.notes == table.notes
        assert loaded.model == "trigger"

    @pytest.mark.asyncio
    async def test_defence_identity_without_attack_power(self, tmp_path):
        runner = _small_runner(tmp_path / "cache")
        runner.registry.register("trigger", TriggerVictim(threshold=1.0))
        table = await runner.defence_eval(_loud_snippet(), [DefenceChain()], "trigger", _trigger_data())
        assert table.report("identity").alpha_pct == {"empty_rate": None, "asl": None, "bleu": None, "wer": None}


class TestReports:
    def test_clamp_sweep_fixture(self):
        report = load_report(FIXTURES / "clamp_complete.csv")
        assert report.parameter == "epsilon"
        assert len(report.values) == 15
        assert report.values[5] == report.values[6] == 0.005
        assert report.series() == ["small.en", "tiny.en", "baseline small.en", "baseline tiny.en"]

        tiny = report.cell("tiny.en", 5).metrics
        assert (tiny.empty_rate, tiny.asl) == (1.0, 0.0)
        assert report.cell("tiny.en", 6).metrics == tiny
        assert tiny.bleu is None
        for column in range(15):
            assert report.cell("baseline tiny.en", column).metrics.empty_rate == 0.0

    def test_lowpass_defence_fixture(self):
        table = load_report(FIXTURES / "lowpass_defence.csv")
        labels = [r.defence for r in table.reports]
        assert labels[0] == "None"
        assert len(labels) == 8

        seven = table.report("7kHz")
        assert seven.alpha_pct["asl"] == 28.2
        assert table.report("5.5kHz").alpha_pct["wer"] == 64.3
        for report in table.reports:
            recomputed = attack_power(report.attacked, report.clean)
            for metric, value in recomputed.as_dict().items():
                assert value == pytest.approx(getattr(report.alpha_d, metric), abs=1e-9)
            for metric, pct in retained_power(report.alpha_d, report.alpha_base).items():
                assert pct == pytest.approx(report.alpha_pct[metric], abs=0.1)

    def test_mulaw_defence_fixture(self):
        table = load_report(FIXTURES / "mulaw_defence.csv")
        assert [r.defence for r in table.reports] == ["None", "Mu Comp", "Mu Decomp Comp"]
        assert set(table.report("None").alpha_pct.values()) == {100.0}
        for report in table.reports:
            for metric, pct in retained_power(report.alpha_d, report.alpha_base).items():
                assert pct == pytest.approx(report.alpha_pct[metric], abs=0.1)

    def test_transfer_fixture(self):
        report = load_report(FIXTURES / "transfer.csv")
        assert report.surrogates == ["small.en", "tiny.en"]
        assert report.objective == "complete"
        for s in report.surrogates:
            for v in report.victims:
                if s != v:
                    diagonal = report.cell("complete", s, s).metrics.empty_rate
                    assert diagonal > report.cell("complete", s, v).metrics.empty_rate
        assert report.cell("partial", "tiny.en", "tiny.en").metrics.wer == 0.999

    @pytest.mark.parametrize("name, parameter, n_values, metrics", [
        ("length_complete.csv", "length", 11, ("empty_rate", "asl")),
        ("position_complete.csv", "position", 8, ("empty_rate", "asl")),
        ("clamp_partial.csv", "epsilon", 8, ("empty_rate", "asl", "bleu", "wer")),
        ("length_partial.csv", "length", 7, ("empty_rate", "asl", "bleu", "wer")),
    ])
    def test_remaining_sweep_fixtures(self, name, parameter, n_values, metrics):
        report = load_report(FIXTURES / name)
        assert report.parameter == parameter
        assert len(report.values) == n_values
        assert report.series() == ["small.en", "tiny.en", "baseline small.en", "baseline tiny.en"]
        assert len(report.cells) == 4 * n_values
        for cell in report.cells:
            for metric in ("empty_rate", "asl", "bleu", "wer"):
                assert (getattr(cell.metrics, metric) is not None) == (metric in metrics), (cell.series, metric)
            if cell.series.startswith("baseline "):
                assert cell.metrics.empty_rate == 0.0

    def test_partial_fixtures_keep_their_text_metrics(self):
        clamp = load_report(FIXTURES / "clamp_partial.csv")
        tiny = clamp.cell("tiny.en", 7).metrics
        assert (tiny.empty_rate, tiny.asl, tiny.bleu, tiny.wer) == (0.964, 3.46, 0.008, 0.999)
        # duplicated grid points are kept positionally
        assert clamp.values[3] == clamp.values[4] == 0.00125
        assert clamp.cell("tiny.en", 3).metrics == clamp.cell("tiny.en", 4).metrics

        length = load_report(FIXTURES / "length_partial.csv")
        assert length.cell("tiny.en", 6).metrics.wer == 1.0
        assert length.cell("baseline small.en", 0).metrics.bleu == 0.657

        position = load_report(FIXTURES / "position_complete.csv")
        assert position.values[0] == 0.0
        assert position.cell("tiny.en", 0).metrics.empty_rate == 0.995

    def test_defence_csv_keeps_provenance_and_notes(self, tmp_path):
        table = load_report(FIXTURES / "mulaw_defence.csv").model_copy(update={
            "model": "toy:42",
            "provenance": Provenance(seed=0, config_hash="abc123", snippet_file="snippets/abc123.f32",
                                     snippet_digest="d" * 64),
            "notes": ["decoding: greedy argmax", "filters: causal, first 3 s only"],
        })
        loaded = load_report(emit_report(table, tmp_path / "defence.csv"))
        assert loaded.model == "toy:42"
        assert loaded.provenance == table.provenance
        assert loaded.notes == table.notes
        assert [r.defence for r in loaded.reports] == ["None", "Mu Comp", "Mu Decomp Comp"]
        assert loaded.report("Mu Comp").alpha_pct == table.report("Mu Comp").alpha_pct

    def test_sweep_and_transfer_csv_keep_notes(self, tmp_path):
        notes = ["decoding: greedy argmax", "data: train 8, validation 4, test 6"]
        for name in ("clamp_complete.csv", "transfer.csv"):
            report = load_report(FIXTURES / name).model_copy(update={"notes": notes})
            loaded = load_report(emit_report(report, tmp_path / name))
            assert loaded.notes == notes
            assert loaded.cells == report.cells

    def test_csv_and_json_agree(self, tmp_path):
        report = load_report(FIXTURES / "clamp_complete.csv")
        as_json = load_report(emit_report(report, tmp_path / "clamp.json"))
        as_csv = load_report(emit_report(report, tmp_path / "clamp.csv"))
        assert as_json.cells == report.cells
        assert as_csv.cells == report.cells
        assert json.loads((tmp_path / "clamp.json").read_text())["schema_version"] == 1

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ConfigurationError):
            emit_report(load_report(FIXTURES / "transfer.csv"), tmp_path / "t.xlsx")
