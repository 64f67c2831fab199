import math

import pytest
import torch

from softmask_mdlm.config.schema import DecodeConfig, TDConfig
from softmask_mdlm.core.errors import DomainError, NumericalError
from softmask_mdlm.models.soft_input import SoftInput
from softmask_mdlm.services.decoding import (
    Decoder, SequenceState, decode, nucleus_distribution, sample_token, select_reveals_entropy,
    select_reveals_random, steps_from_budget,
)

from conftest import MASK_ID, modelo_pequeno, softmask_nulo


def _estado(L, mask_id=MASK_ID, prompt=None):
    return SequenceState.initial(prompt, L, mask_id)


def _revelar(estado, selecao):
    tokens = estado.tokens.clone()
    tokens[selecao] = 0
    return SequenceState(tokens, estado.prompt_len, estado.mask_id)


class TestBudget:
    def test_examples(self):
        assert steps_from_budget(0.25, 768) == 192
        assert steps_from_budget(1.0, 512) == 512
        assert steps_from_budget(0.5, 10) == 5

    def test_at_least_one_step(self):
        assert steps_from_budget(0.01, 10) == 1
        assert DecodeConfig(length=64, nfe_budget=0.25).total_steps() == 16
        assert DecodeConfig(length=10).total_steps() == 10

    @pytest.mark.parametrize("orcamento", [0.0, -0.5, 1.5])
    def test_invalid(self, orcamento):
        with pytest.raises(DomainError):
            steps_from_budget(orcamento, 10)


class TestSampleToken:
    def test_argmax(self):
        assert sample_token(torch.tensor([0.1, 0.7, 0.2])) == 1
        # A máscara nunca é escolhida, mesmo com a maior massa
        assert sample_token(torch.tensor([0.1, 0.2, 0.7]), mask_id=2) == 1

    def test_nucleus_support(self):
        p = torch.tensor([0.5, 0.3, 0.15, 0.05], dtype=torch.float64)
        nucleo = nucleus_distribution(p, top_p=0.9)[0]
        assert nucleo.nonzero().squeeze(-1).tolist() == [0, 1, 2]
        torch.testing.assert_close(nucleo[:3], p[:3] / 0.95)
        g = torch.Generator().manual_seed(0)
        amostras = sample_token(p.expand(5000, 4), "nucleus", g, top_p=0.9)
        assert set(amostras.tolist()) == {0, 1, 2}

    def test_cold_temperature_is_argmax(self):
        p = torch.tensor([0.2, 0.45, 0.35], dtype=torch.float64).expand(10_000, 3)
        amostras = sample_token(p, "nucleus", torch.Generator().manual_seed(1), temperature=1e-3, top_p=0.9)
        assert bool((amostras == 1).all())

    def test_empty_nucleus(self):
        with pytest.raises(NumericalError, match="nucleus set empty"):
            sample_token(torch.tensor([0.0, 0.0, 1.0]), "nucleus", torch.Generator(), mask_id=2)

    def test_unknown_sampler(self):
        with pytest.raises(DomainError):
            sample_token(torch.tensor([0.5, 0.5]), "beam")


class TestRevealRandom:
    def test_final_step_reveals_all(self):
        selecao = select_reveals_random(_estado(12), 0.0, 0.25, torch.Generator().manual_seed(0))
        assert bool(selecao.all())

    def test_no_masks(self):
        estado = SequenceState(torch.zeros(6, dtype=torch.long), 0, MASK_ID)
        assert not bool(select_reveals_random(estado, 0.5, 0.75, torch.Generator()).any())

    def test_first_step_fraction(self):
        selecao = select_reveals_random(_estado(100_000), 0.75, 1.0, torch.Generator().manual_seed(2))
        sigma = math.sqrt(0.25 * 0.75 / 100_000)
        assert abs(selecao.double().mean().item() - 0.25) < 3 * sigma


class TestRevealEntropy:
    def test_first_step_count(self):
        probs = torch.softmax(torch.randn(512, 7, dtype=torch.float64), dim=-1)
        selecao = select_reveals_entropy(_estado(512, mask_id=6), probs, 127 / 128, 1.0)
        assert int(selecao.sum()) == 4

    def test_lowest_entropy_then_position(self):
        probs = torch.full((8, 4), 0.25, dtype=torch.float64)
        probs[5] = torch.tensor([1.0, 0.0, 0.0, 0.0])
        # 8 mascaradas em 2 passos: n = 4, a posição de entropia zero primeiro e depois as de menor índice
        selecao = select_reveals_entropy(_estado(8, mask_id=3), probs, 0.5, 1.0)
        assert selecao.nonzero().squeeze(-1).tolist() == [0, 1, 2, 5]

    def test_ceil_schedule(self):
        estado = _estado(5)
        probs = torch.full((5, 11), 1 / 11, dtype=torch.float64)
        primeiro = select_reveals_entropy(estado, probs, 0.5, 1.0)
        assert primeiro.nonzero().squeeze(-1).tolist() == [0, 1, 2]
        estado = _revelar(estado, primeiro)
        segundo = select_reveals_entropy(estado, probs, 0.0, 0.5)
        assert segundo.nonzero().squeeze(-1).tolist() == [3, 4]

    def test_nothing_masked(self):
        estado = SequenceState(torch.zeros(3, dtype=torch.long), 0, MASK_ID)
        with pytest.raises(DomainError):
            select_reveals_entropy(estado, torch.full((3, 11), 1 / 11), 0.0, 1.0)

    def test_totality_exhaustive(self):
        for L in range(1, 65):
            probs = torch.full((L, 2), 0.5, dtype=torch.float64)
            for T in range(1, L + 1):
                estado = _estado(L, mask_id=1)
                for i in range(T, 0, -1):
                    selecao = select_reveals_entropy(estado, probs, (i - 1) / T, i / T)
                    assert int(selecao.sum()) >= 1, (L, T, i)
                    estado = _revelar(estado, selecao)
                assert estado.num_masked() == 0, (L, T)


class TestDecode:
    def _config(self, **kwargs):
        base = dict(length=8, steps=4, strategy="schedule_random", sampler="nucleus", top_p=0.95)
        return DecodeConfig(**{**base, **kwargs})

    def test_totality_and_monotone_reveal(self, model64, softmask64):
        for estrategia in ("schedule_random", "entropy_count"):
            resultado = decode(None, model64, softmask64, self._config(strategy=estrategia))
            assert len(resultado.tokens) == 8 and MASK_ID not in resultado.tokens
            restantes = [r["masked_remaining"] for r in resultado.trace]
            assert restantes == sorted(restantes, reverse=True) and restantes[-1] == 0
            assert sum(r["revealed"] for r in resultado.trace) == 8
            assert [r["step"] for r in resultado.trace] == [4, 3, 2, 1]

    def test_entropy_count_reveals_ceil_schedule(self, model64):
        resultado = decode(None, model64, None, self._config(strategy="entropy_count", length=10, steps=4))
        assert [r["revealed"] for r in resultado.trace] == [3, 3, 2, 2]

    def test_sm_neutral_at_zero_scale(self, model64):
        nulo = softmask_nulo()
        for seed in range(100):
            ligado = decode(None, model64, nulo, self._config(seed=seed, sm_enabled=True))
            desligado = decode(None, model64, nulo, self._config(seed=seed, sm_enabled=False))
            assert ligado.sequence == desligado.sequence, seed

    def test_seeded_determinism(self, model64, softmask64):
        a = decode(None, model64, softmask64, self._config(seed=3))
        b = decode(None, model64, softmask64, self._config(seed=3))
        assert a.sequence == b.sequence and a.trace == b.trace

    def test_prompt_is_frozen(self, model64, softmask64):
        prompt = [1, 2, 3]
        for seed in range(5):
            resultado = decode(prompt, model64, softmask64, self._config(seed=seed))
            assert resultado.sequence[:3] == prompt
            assert len(resultado.sequence) == 11

    def test_single_position_argmax(self, model64):
        config = DecodeConfig(length=1, steps=1, sampler="argmax", sm_enabled=False)
        resultado = decode(None, model64, None, config)
        with torch.no_grad():
            probs = model64(SoftInput.from_tokens(torch.tensor([MASK_ID]), MASK_ID, torch.float64))[0, 0].clone()
        probs[MASK_ID] = 0.0
        assert resultado.tokens == [int(probs.argmax())]

    def test_step_dependent_feedback(self, model64, softmask64):
        # SM apenas no primeiro passo reverso
        td = TDConfig(mode="stepwise_sm_to_binary", threshold=1.0)
        resultado = decode(None, model64, softmask64, self._config(length=12, steps=4, td=td, strategy="entropy_count"))
        assert resultado.trace[0]["lambda_max"] > 0.0
        assert all(r["lambda_max"] == 0.0 for r in resultado.trace[1:])

    def test_time_conditioned_model(self, softmask64):
        model = modelo_pequeno(time_conditioned=True)
        resultado = decode(None, model, softmask64, self._config())
        assert MASK_ID not in resultado.tokens

    def test_length_overflow(self, model64, softmask64):
        with pytest.raises(DomainError):
            decode(list(range(10)), model64, softmask64, self._config())

    def test_decoder_with_vocab(self, arith_vocab, softmask64):
        model = modelo_pequeno(vocab_size=arith_vocab.size)
        decodificador = Decoder(model, softmask64, arith_vocab, self._config(seed=1))
        texto, resultado = decodificador.gerar("3+4=")
        assert texto.startswith("3+4=")
        assert resultado.sequence[:4] == arith_vocab.tokenize("3+4=")
        assert decodificador.gerar("3+4=", seed=1)[0] == texto
