import math

import pytest
import torch

from softmask_mdlm.config.schema import TDConfig
from softmask_mdlm.core.errors import DomainError, NumericalError
from softmask_mdlm.core.softmask import (
    SoftMask, apply_sm, compute_lambda, effective_params, entropy, init_params, inverse_params,
    softmax_temperature_weights, softplus_inverse, td_multiplier, top_k_weights,
)
from softmask_mdlm.models.soft_input import embed_mixture

MASK = 6
P_EXEMPLO = torch.tensor([0.5, 0.2, 0.1, 0.1, 0.05, 0.05, 0.0], dtype=torch.float64)


def _softmask(k=3, omega_s=None, raw_s=0.0, raw_a=0.0, raw_b=0.0):
    if omega_s is not None:
        raw_s = math.log(omega_s / (1 - omega_s))
    return SoftMask(k=k, raw_s=raw_s, raw_a=raw_a, raw_b=raw_b).to(torch.float64)


class TestEntropy:
    def test_examples(self):
        assert float(entropy(torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64))) == 0.0
        assert float(entropy(torch.full((64,), 1 / 64, dtype=torch.float64))) == pytest.approx(math.log(64))
        assert float(entropy(torch.tensor([0.5, 0.5, 0.0, 0.0], dtype=torch.float64))) == pytest.approx(math.log(2))

    def test_batched(self):
        p = torch.softmax(torch.randn(3, 5, 9, dtype=torch.float64), dim=-1)
        assert entropy(p).shape == (3, 5)


class TestReparametrizacao:
    def test_examples(self):
        omega_s, omega_a, omega_b = effective_params(0.0, 0.0, 0.0)
        assert float(omega_s) == 0.5
        assert float(omega_a) == pytest.approx(math.log(2))
        assert float(omega_b) == pytest.approx(-math.log(2))

    def test_signs(self):
        for raw in (-5.0, -0.3, 0.0, 2.0, 5.0):
            omega_s, omega_a, omega_b = effective_params(raw, raw, raw)
            assert 0 < float(omega_s) < 1
            assert float(omega_a) >= 0
            assert float(omega_b) <= 0

    def test_inverse_roundtrip(self):
        g = torch.Generator().manual_seed(0)
        raws = torch.rand(200, 3, generator=g, dtype=torch.float64) * 10 - 5
        for raw_s, raw_a, raw_b in raws:
            volta = inverse_params(*effective_params(raw_s, raw_a, raw_b))
            for original, recuperado in zip((raw_s, raw_a, raw_b), volta):
                assert abs(float(original) - float(recuperado)) < 1e-9

    def test_softplus_inverse(self):
        assert float(softplus_inverse(0.75)) == pytest.approx(math.log(math.exp(0.75) - 1))
        assert float(softplus_inverse(50.0)) == pytest.approx(50.0)


class TestInitParams:
    def test_lower_bound(self):
        sm = init_params(-1.5, 11)
        omega_s, omega_a, omega_b = (float(v) for v in sm.effective())
        assert omega_b == pytest.approx(-0.75, rel=1e-5)
        assert omega_a == pytest.approx(20 / 3, rel=1e-5)
        assert omega_s == pytest.approx(0.0180, abs=1e-4)
        assert float(sm.raw_b) == pytest.approx(0.1107, abs=1e-4)

    def test_invalid(self):
        with pytest.raises(DomainError):
            init_params(0.0, 11)
        with pytest.raises(DomainError):
            init_params(-1.5, 11, k=11)
        with pytest.raises(DomainError):
            SoftMask(k=0)

    def test_full_softmax_temperature(self):
        sm = init_params(-1.5, 11, k="full", temperature=2.0)
        assert sm.raw_tau.requires_grad
        assert len(sm.trainable_parameters()) == 4
        assert sm.summary()["temperature"] == pytest.approx(2.0, rel=1e-5)
        fixo = init_params(-1.5, 11)
        assert not fixo.raw_tau.requires_grad
        assert "temperature" not in fixo.summary()


class TestLambda:
    def test_midpoint(self):
        p = torch.tensor([0.5, 0.5, 0.0], dtype=torch.float64)
        omega = [torch.tensor(v, dtype=torch.float64) for v in (0.3, 4.0, -math.log(2))]
        lam = compute_lambda(p, *omega)
        assert float(lam) == pytest.approx(0.15)

    def test_zero_scale(self):
        p = torch.softmax(torch.randn(4, 9, dtype=torch.float64), dim=-1)
        lam = compute_lambda(p, torch.tensor(0.0, dtype=torch.float64), torch.tensor(5.0), torch.tensor(-0.7))
        assert torch.equal(lam, torch.zeros(4, dtype=torch.float64))

    def test_uniform_is_tiny(self):
        p = torch.full((64,), 1 / 64, dtype=torch.float64)
        omega = [torch.tensor(v, dtype=torch.float64) for v in (0.5, 6.667, -0.75)]
        lam = float(compute_lambda(p, *omega))
        esperado = 0.5 / (1 + math.exp(6.667 * (math.log(64) - 0.75)))
        assert lam == pytest.approx(esperado, rel=1e-9)
        assert 6e-11 < lam < 7e-11

    def test_monotone_and_bounded(self):
        omega = [torch.tensor(v, dtype=torch.float64) for v in (0.7, 3.0, -1.0)]
        picos = torch.linspace(0.34, 0.99, 20, dtype=torch.float64)
        p = torch.stack([picos, (1 - picos) / 2, (1 - picos) / 2], dim=-1)
        lam = compute_lambda(p, *omega)
        # Pico maior, entropia menor, confiança maior
        assert bool((lam[1:] > lam[:-1]).all())
        assert bool((lam < 0.7).all())


class TestSuperposicao:
    def test_top_k_example(self):
        ids, pesos = top_k_weights(P_EXEMPLO, 3, MASK)
        assert ids.tolist() == [0, 1, 2]
        torch.testing.assert_close(pesos, torch.tensor([0.625, 0.25, 0.125], dtype=torch.float64))

    def test_top_1_and_uniform(self):
        ids, pesos = top_k_weights(P_EXEMPLO, 1, MASK)
        assert ids.tolist() == [0] and pesos.tolist() == [1.0]
        ids, pesos = top_k_weights(torch.full((7,), 1 / 7, dtype=torch.float64), 3, MASK)
        assert ids.tolist() == [0, 1, 2]
        torch.testing.assert_close(pesos, torch.full((3,), 1 / 3, dtype=torch.float64))

    def test_mask_never_selected(self):
        p = torch.tensor([0.1, 0.1, 0.8], dtype=torch.float64)
        ids, pesos = top_k_weights(p, 2, 2)
        assert 2 not in ids.tolist()
        assert ids.tolist() == [0, 1]
        torch.testing.assert_close(pesos, torch.tensor([0.5, 0.5], dtype=torch.float64))

    def test_top_k_errors(self):
        with pytest.raises(DomainError):
            top_k_weights(P_EXEMPLO, 7, MASK)
        with pytest.raises(NumericalError, match="degenerate distribution"):
            top_k_weights(torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64), 2, 2)

    def test_temperature_one_renormalizes(self):
        p = torch.tensor([0.4, 0.2, 0.2, 0.2], dtype=torch.float64)
        ids, pesos = softmax_temperature_weights(p, 1.0, 3)
        assert ids.tolist() == [0, 1, 2]
        torch.testing.assert_close(pesos, torch.tensor([0.5, 0.25, 0.25], dtype=torch.float64))

    def test_temperature_limits(self):
        p = torch.tensor([0.9, 0.1, 0.0], dtype=torch.float64)
        _, pesos = softmax_temperature_weights(p, 10.0, 2)
        assert pesos.tolist() == pytest.approx([0.555, 0.445], abs=1e-3)
        _, pesos = softmax_temperature_weights(torch.tensor([0.3, 0.5, 0.2, 0.0], dtype=torch.float64), 1e-3, 3)
        assert float(pesos.max()) > 0.999 and int(pesos.argmax()) == 1

    def test_temperature_must_be_positive(self):
        with pytest.raises(DomainError):
            softmax_temperature_weights(P_EXEMPLO, 0.0, MASK)


class TestTDMultiplier:
    def test_stepwise(self):
        td = TDConfig(mode="stepwise_sm_to_binary", threshold=0.2)
        assert td_multiplier(90, 100, td) == 1.0
        assert td_multiplier(10, 100, td) == 0.0
        td = TDConfig(mode="stepwise_binary_to_sm", threshold=0.2)
        assert td_multiplier(90, 100, td) == 0.0
        assert td_multiplier(10, 100, td) == 1.0

    def test_linear(self):
        td = TDConfig(mode="linear_sm_to_binary")
        assert td_multiplier(100, 100, td) == 1.0
        assert td_multiplier(1, 100, td) == pytest.approx(0.01)
        assert td_multiplier(25, 100, TDConfig(mode="linear_binary_to_sm")) == pytest.approx(0.75)

    def test_none(self):
        for passo in range(1, 11):
            assert td_multiplier(passo, 10, None) == 1.0
            assert td_multiplier(passo, 10, TDConfig()) == 1.0

    def test_step_out_of_range(self):
        with pytest.raises(DomainError):
            td_multiplier(0, 10, None)
        with pytest.raises(DomainError):
            td_multiplier(11, 10, None)


class TestApplySM:
    def test_blend_example(self):
        # ω_a = 0 leva a λ = ω_s / 2 = 0.4 para qualquer p
        sm = _softmask(omega_s=0.8, raw_a=-1e4)
        p = torch.stack([P_EXEMPLO, P_EXEMPLO])
        saida = apply_sm(torch.tensor([MASK, 3]), p, sm, MASK)
        assert float(saida.mask_weight[0]) == pytest.approx(0.6, abs=1e-6)
        assert saida.token_ids[0].tolist() == [0, 1, 2]
        assert saida.token_weights[0].tolist() == pytest.approx([0.25, 0.10, 0.05], abs=1e-6)
        # Posição revelada fica intacta
        assert float(saida.mask_weight[1]) == 0.0
        assert int(saida.token_ids[1, 0]) == 3 and float(saida.token_weights[1, 0]) == 1.0
        assert float(saida.token_weights[1, 1:].sum()) == 0.0
        saida.validate(MASK)

    def test_zero_lambda_is_pure_mask(self):
        sm = _softmask(raw_s=-1e4)
        saida = apply_sm(torch.tensor([MASK]), P_EXEMPLO[None], sm, MASK)
        assert float(saida.mask_weight[0]) == 1.0
        assert float(saida.token_weights.sum()) == 0.0

    def test_hard_argmax_feedback(self):
        sm = _softmask(k=1, raw_s=1e4, raw_a=1e4)
        p = torch.tensor([[0.05, 0.9, 0.05, 0.0]], dtype=torch.float64)
        saida = apply_sm(torch.tensor([3]), p, sm, 3)
        assert float(saida.mask_weight[0]) == 0.0
        assert saida.token_ids[0].tolist() == [1]
        assert saida.token_weights[0].tolist() == [1.0]

    def test_td_scales_lambda(self):
        sm = _softmask(omega_s=0.8, raw_a=-1e4)
        saida = sm(torch.tensor([MASK]), P_EXEMPLO[None], MASK, step=1, total=4,
                   td=TDConfig(mode="linear_sm_to_binary"))
        assert float(saida.mask_weight[0]) == pytest.approx(1 - 0.4 / 4, abs=1e-6)

    def test_full_support_matches_dense_average(self):
        V = 6
        sm = _softmask(k=V - 1, raw_s=1e4, raw_a=1e4, raw_b=10.0)
        p = torch.tensor([[0.6, 0.2, 0.1, 0.05, 0.05, 0.0]], dtype=torch.float64)
        E = torch.randn(V, 4, dtype=torch.float64)
        saida = apply_sm(torch.tensor([V - 1]), p, sm, V - 1)
        torch.testing.assert_close(embed_mixture(saida, E, V - 1)[0], p[0] @ E, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("k", [1, 3, "full"])
    def test_simplex_invariant_fuzz(self, k):
        # 10^5 posições num único lote (N, |V|)
        g = torch.Generator().manual_seed(0)
        V, N = 12, 100_000
        brutos = (torch.rand(3, generator=g, dtype=torch.float64) * 10 - 5).tolist()
        sm = _softmask(k, raw_s=brutos[0], raw_a=brutos[1], raw_b=brutos[2])
        p = torch.softmax(3 * torch.randn(N, V, generator=g, dtype=torch.float64), dim=-1)
        x_hat = torch.randint(0, V, (N,), generator=g)
        saida = apply_sm(x_hat, p, sm, V - 1)
        saida.validate(V - 1)
        total = saida.mask_weight + saida.token_weights.sum(-1)
        assert float((total - 1).abs().max()) <= 1e-6
        revelado = x_hat != V - 1
        assert int(revelado.sum()) > 0 and int((~revelado).sum()) > 0
        assert torch.equal(saida.token_ids[..., 0][revelado], x_hat[revelado])
        assert bool((saida.mask_weight[revelado] == 0).all())

    def test_full_softmax_gradient_with_zero_probabilities(self):
        sm = _softmask("full", raw_s=0.3, raw_a=0.5, raw_b=0.2)
        p = torch.tensor([[0.7, 0.3, 0.0, 0.0]], dtype=torch.float64)
        saida = apply_sm(torch.tensor([3]), p, sm, 3)
        assert float(saida.token_weights[0, 2]) == 0.0
        E = torch.randn(4, 5, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
        embed_mixture(saida, E, 3).pow(2).sum().backward()
        assert sm.raw_tau.grad is not None
        assert bool(torch.isfinite(sm.raw_tau.grad).all())
        assert float(sm.raw_tau.grad) != 0.0
        for nome in ("raw_s", "raw_a", "raw_b"):
            assert bool(torch.isfinite(getattr(sm, nome).grad).all())

    def test_gradient_reaches_raw_parameters(self):
        sm = _softmask(raw_s=0.3, raw_a=0.5, raw_b=0.2)
        saida = apply_sm(torch.tensor([MASK]), P_EXEMPLO[None], sm, MASK)
        E = torch.randn(7, 4, dtype=torch.float64)
        embed_mixture(saida, E, MASK).sum().backward()
        for nome in ("raw_s", "raw_a", "raw_b"):
            assert getattr(sm, nome).grad is not None

    def test_input_probabilities_untouched(self):
        p = P_EXEMPLO[None].clone().requires_grad_(True)
        saida = apply_sm(torch.tensor([MASK]), p, _softmask(), MASK)
        assert saida.token_weights.grad_fn is not None
        embed_mixture(saida, torch.randn(7, 3, dtype=torch.float64), MASK).sum().backward()
        assert p.grad is None
