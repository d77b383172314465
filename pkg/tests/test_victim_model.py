import json
import re
from pathlib import Path

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from eosmute.audio.core import splice_snippet
from eosmute.errors import CapabilityError, ConfigurationError, ContractError, DomainError
from eosmute.harness.toy_corpus import ToyCorpusConfig
from eosmute.schema.audio import Waveform
from eosmute.schema.victim import TranscriptionResult, Vocabulary
from eosmute.services.artifact_store import ArtifactStore
from eosmute.victim.checkpoint import load_checkpoint, save_checkpoint
from eosmute.victim.pretraining import PretrainConfig, insert_noise_burst, pretrain
from eosmute.victim.registry import ModelRegistry
from eosmute.victim.toy import make_toy_model, make_vocabulary

from .conftest import SMALL_CONFIG, TriggerVictim, silent_examples

GOLDEN = Path(__file__).parent / "fixtures" / "golden_transcriptions.json"
GOLDEN_SEED = 42
EOS = make_vocabulary(16).eos_id


def _example_wave(toy_examples, i: int = 0) -> Waveform:
    return toy_examples[i].waveform


class TestVocabulary:
    def test_toy_vocabulary_layout(self):
        vocab = make_vocabulary(8)
        assert vocab.size == 8
        assert vocab.eos_id == 1
        assert vocab.bos_sequence == [0]
        assert vocab.special_ids == [0, 1]
        assert vocab.content_ids == list(range(2, 8))

    def test_encode_decode(self):
        vocab = make_vocabulary(8)
        ids = vocab.encode("Alfa, charlie.")
        assert ids == [2, 4]
        assert vocab.decode([0, *ids, 1]) == "alfa charlie"

    def test_unknown_word(self):
        with pytest.raises(ContractError):
            make_vocabulary(8).encode("alfa zulu")

    def test_too_small(self):
        with pytest.raises(ContractError):
            make_vocabulary(3)

    def test_invalid_members(self):
        with pytest.raises(ValueError):
            Vocabulary(tokens=["a", "b"], eos_id=2, bos_sequence=[0])
        with pytest.raises(ValueError):
            Vocabulary(tokens=["a", "a"], eos_id=1, bos_sequence=[0])

    def test_empty_transcription_cannot_hit_cap(self):
        with pytest.raises(ValueError):
            TranscriptionResult(token_ids=[], hit_cap=True)


class TestToyModel:
    def test_deterministic_in_seed(self):
        a = make_toy_model(3, 8, SMALL_CONFIG)
        b = make_toy_model(3, 8, SMALL_CONFIG)
        c = make_toy_model(4, 8, SMALL_CONFIG)
        assert a.identity == b.identity
        assert a.identity != c.identity
        assert re.fullmatch(r"toy:3@[0-9a-f]{12}", a.identity)

    def test_build_leaves_global_rng_alone(self):
        torch.manual_seed(123)
        expected = torch.rand(3)
        torch.manual_seed(123)
        make_toy_model(5, 8, SMALL_CONFIG)
        torch.testing.assert_close(torch.rand(3), expected)

    def test_next_token_distribution(self, toy_model, toy_examples):
        logp = toy_model.next_token_logprobs(_example_wave(toy_examples), [0])
        assert logp.shape == (8,)
        assert np.logaddexp.reduce(logp) == pytest.approx(0.0, abs=1e-9)

    def test_sequence_rows_are_causal(self, toy_model, toy_examples):
        x = _example_wave(toy_examples)
        rows = toy_model.sequence_logprobs(x, [0, 2, 3, 4])
        assert rows.shape == (4, 8)
        np.testing.assert_allclose(rows[1], toy_model.next_token_logprobs(x, [0, 2]), atol=1e-10)
        np.testing.assert_allclose(rows[2], toy_model.next_token_logprobs(x, [0, 2, 3]), atol=1e-10)

    def test_prefix_contract(self, toy_model, toy_examples):
        x = _example_wave(toy_examples)
        with pytest.raises(ContractError):
            toy_model.next_token_logprobs(x, [2, 3])
        with pytest.raises(ContractError):
            toy_model.next_token_logprobs(x, [0, 99])
        with pytest.raises(ContractError):
            toy_model.next_token_logprobs(x, [0] + [2] * SMALL_CONFIG.max_positions)

    def test_sample_rate_contract(self, toy_model):
        with pytest.raises(ContractError):
            toy_model.transcribe(Waveform(samples=np.zeros(800), sample_rate=8000))

    def test_transcription_respects_cap(self, toy_model, toy_examples):
        for result in toy_model.transcribe_many([ex.waveform for ex in toy_examples[:4]], max_tokens=3):
            assert len(result) <= 3
            if result.hit_cap:
                assert len(result) == 3
            if result.is_empty:
                assert result.first_token_id == toy_model.vocabulary.eos_id
            assert all(t in toy_model.vocabulary.content_ids for t in result.token_ids)

    def test_batched_decoding_matches_single(self, toy_model, toy_examples):
        waves = [ex.waveform for ex in toy_examples[:5]]
        batched = toy_model.transcribe_many(waves, max_tokens=6, batch_size=4)
        single = [toy_model.transcribe(w, max_tokens=6) for w in waves]
        assert batched == single

    def test_max_tokens_must_be_positive(self, toy_model, toy_examples):
        with pytest.raises(DomainError):
            toy_model.transcribe(_example_wave(toy_examples), max_tokens=0)

    def test_golden_greedy_transcription(self, default_toy, toy_examples):
        results = default_toy.transcribe_many([ex.waveform for ex in toy_examples[:4]], max_tokens=8)
        observed = {"identity": default_toy.identity, "token_ids": [r.token_ids for r in results]}
        rebuilt = make_toy_model(GOLDEN_SEED).transcribe_many([ex.waveform for ex in toy_examples[:4]], max_tokens=8)
        assert [r.token_ids for r in rebuilt] == observed["token_ids"]
        if not GOLDEN.exists():
            GOLDEN.write_text(json.dumps(observed, indent=2) + "\n", encoding="utf-8")
            pytest.skip(f"recorded {GOLDEN.name}; later runs compare against it")
        assert observed == json.loads(GOLDEN.read_text(encoding="utf-8"))

    def test_audio_beyond_the_chunk_is_ignored(self, toy_model, toy_examples):
        x = _example_wave(toy_examples)
        chunk = SMALL_CONFIG.frontend.chunk_samples
        padded = np.zeros(chunk)
        padded[: len(x)] = x.samples
        longer = np.concatenate([padded, np.full(4000, 0.5)])
        np.testing.assert_allclose(
            toy_model.next_token_logprobs(Waveform(samples=longer), [0]),
            toy_model.next_token_logprobs(x, [0]),
            atol=1e-10,
        )


@pytest.fixture(scope="module")
def default_toy():
    """Untrained toy:42 with the default configuration"""
    return make_toy_model(GOLDEN_SEED)


def _eos_loss(prefix):
    def loss_fn(scorer):
        return -scorer(prefix)[:, EOS].sum()

    return loss_fn


class TestInputGradient:
    def test_matches_central_differences(self, default_toy, toy_examples):
        eos = default_toy.vocabulary.eos_id
        rng = np.random.default_rng(7)
        h = 1e-4

        def loss_at(samples):
            return -default_toy.sequence_logprobs(Waveform(samples=samples), [0, 2])[:, eos].sum()

        for ex in toy_examples[:5]:
            x = ex.waveform
            grad = default_toy.input_gradient(x, _eos_loss([0, 2]))
            assert grad.shape == (len(x),)
            for i in rng.choice(len(x), size=10, replace=False):
                up, down = x.samples.copy(), x.samples.copy()
                up[i] += h
                down[i] -= h
                fd = (loss_at(up) - loss_at(down)) / (2 * h)
                g = grad[i]
                assert abs(fd - g) <= 1e-3 * max(abs(g), abs(fd), 1e-9), (i, g, fd)

    def test_gradient_is_linear_in_the_loss(self, default_toy, toy_examples):
        x = toy_examples[0].waveform
        base = default_toy.input_gradient(x, _eos_loss([0]))
        scaled = default_toy.input_gradient(x, lambda scorer: 2.5 * _eos_loss([0])(scorer))
        np.testing.assert_allclose(scaled, 2.5 * base, rtol=1e-6, atol=1e-12 * np.max(np.abs(base)))

    def test_constant_loss_has_zero_gradient(self, toy_model, toy_examples):
        grad = toy_model.input_gradient(_example_wave(toy_examples), lambda scorer: torch.tensor(1.0))
        assert not np.any(grad)

    def test_non_differentiable_model(self):
        victim = TriggerVictim()
        with pytest.raises(CapabilityError):
            victim.input_gradient(Waveform(samples=np.zeros(100)), lambda scorer: scorer([0]).sum())


class _ScriptedVictim(TriggerVictim):
    """Emits `script` token by token, then eos"""

    def __init__(self, script):
        super().__init__(name="scripted")
        self.script = script

    def decode(self, features, tokens):
        batch, positions = tokens.shape
        target = torch.tensor([self.script[p] if p < len(self.script) else self.vocabulary.eos_id
                               for p in range(positions)])
        logits = F.one_hot(target.expand(batch, positions), self.vocabulary.size).to(torch.float64) * 10.0
        return F.log_softmax(logits, dim=-1)


class TestStubVictim:
    def test_trigger_decoding(self, trigger_victim):
        clean = silent_examples(1)[0].waveform
        assert trigger_victim.transcribe(clean).text == "alfa alfa"

        loud = Waveform(samples=np.full(8000, 0.05))
        result = trigger_victim.transcribe(loud)
        assert result.is_empty
        assert not result.hit_cap

    def test_special_tokens_end_the_transcription(self):
        x = silent_examples(1)[0].waveform
        # bos (id 0) after one word
        result = _ScriptedVictim([2, 0, 3]).transcribe(x)
        assert result.token_ids == [2]
        assert result.text == "alfa"
        assert len(result) == len(result.text.split())
        assert not result.hit_cap

        leading = _ScriptedVictim([0, 2]).transcribe(x)
        assert leading.is_empty
        assert leading.first_token_id == 0


class TestPretraining:
    def test_noise_burst_lengthens_audio(self):
        rng = np.random.default_rng(0)
        x = np.zeros(1000)
        y = insert_noise_burst(x, rng, PretrainConfig(), 16000)
        assert len(y) > len(x)
        assert np.max(np.abs(y)) <= PretrainConfig().noise_max_amplitude

    def test_loss_decreases_and_identity_changes(self, toy_examples):
        model = make_toy_model(0, 8, SMALL_CONFIG)
        before = model.identity
        train = [ex for ex in toy_examples if ex.split == "train"]
        history = pretrain(model, train, PretrainConfig(epochs=10, batch_size=4, noise_probability=0.0))

        assert len(history) == 10
        assert history[-1] < history[0]
        assert model.trained
        assert model.identity != before
        assert all(not p.requires_grad for p in model.network.parameters())

    def test_needs_examples(self):
        with pytest.raises(ConfigurationError):
            pretrain(make_toy_model(0, 8, SMALL_CONFIG), [])


class TestCheckpoint:
    def test_round_trip(self, tmp_path, toy_model, toy_examples):
        path = save_checkpoint(toy_model, tmp_path / "toy.ckpt")
        loaded = load_checkpoint(path)
        assert loaded.identity == toy_model.identity
        x = _example_wave(toy_examples)
        np.testing.assert_array_equal(loaded.next_token_logprobs(x, [0]), toy_model.next_token_logprobs(x, [0]))

    def test_rejects_other_files(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes((10).to_bytes(8, "little") + b'{"a": 1}xx' + b"\x00" * 8)
        with pytest.raises(ConfigurationError):
            load_checkpoint(path)
        (tmp_path / "short.ckpt").write_bytes(b"abc")
        with pytest.raises(ConfigurationError):
            load_checkpoint(tmp_path / "short.ckpt")


class TestRegistry:
    def test_unknown_specs(self, registry):
        with pytest.raises(ConfigurationError):
            registry.resolve("whisper:tiny")
        with pytest.raises(ConfigurationError):
            registry.resolve("toy:abc")

    def test_registered_models_and_adapters(self, registry):
        victim = TriggerVictim(name="adapter")
        registry.register_factory("stub", lambda argument: victim)
        assert registry.resolve("stub:anything") is victim
        assert registry.resolve("small:0") is registry.resolve("small:0")
        assert "stub:" in registry.names()

    def test_toy_models_are_cached_as_checkpoints(self, tmp_path):
        kwargs = dict(
            model_config=SMALL_CONFIG,
            pretrain_config=PretrainConfig(epochs=1, batch_size=4),
            corpus_config=ToyCorpusConfig(vocab_size=8, n_train=4, n_validation=0, n_test=0),
        )
        first = ModelRegistry(store=ArtifactStore(tmp_path), **kwargs)
        model = first.resolve("toy:3")
        assert model.trained
        assert first.store.has_checkpoint(first.toy_cache_key(3))

        second = ModelRegistry(store=ArtifactStore(tmp_path), **kwargs)
        assert second.resolve("toy:3").identity == model.identity

    def test_checkpoint_spec(self, tmp_path, registry, toy_model):
        path = save_checkpoint(toy_model, tmp_path / "m.ckpt")
        assert registry.resolve(f"checkpoint:{path}").identity == toy_model.identity


def test_spliced_audio_changes_scores(toy_model, toy_examples):
    from eosmute.attacks.trainer import init_snippet
    from eosmute.schema.audio import SnippetParams

    x = _example_wave(toy_examples)
    a = init_snippet(SnippetParams(epsilon=0.5, length_seconds=0.2), seed=1)
    clean = toy_model.next_token_logprobs(x, [0])
    attacked = toy_model.next_token_logprobs(splice_snippet(x, a, 0.0), [0])
    assert not np.allclose(clean, attacked)
