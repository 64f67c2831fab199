"""
Função de soft-masking: confiança por entropia, superposição top-k (ou softmax
com temperatura), mistura convexa com a máscara, parâmetros treináveis
reparametrizados e multiplicadores dependentes do passo de decodificação.
"""
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from softmask_mdlm.config.settings import EPSILON_LOG, RAW_S_INICIAL, TEMPERATURA_INICIAL, TOP_K
from softmask_mdlm.core.errors import DomainError, NumericalError
from softmask_mdlm.models.soft_input import SoftInput
from softmask_mdlm.utils.logger import log_debug

FULL_SOFTMAX = "full"


def entropy(p):
    """H(p) em nats, com 0 ln 0 = 0"""
    return -torch.special.xlogy(p, p).sum(-1)


# --- Reparametrização ---------------------------------------------------------

def _como_tensor(x):
    return x if torch.is_tensor(x) else torch.tensor(float(x), dtype=torch.float64)


def softplus_inverse(y):
    y = _como_tensor(y)
    # ln(e^y - 1) escrito de forma estável para y grande
    return y + torch.log(-torch.expm1(-y))


def effective_params(raw_s, raw_a, raw_b):
    """(ω_s, ω_a, ω_b) = (sigmoid(raw_s), softplus(raw_a), -softplus(raw_b))"""
    return torch.sigmoid(_como_tensor(raw_s)), F.softplus(_como_tensor(raw_a)), -F.softplus(_como_tensor(raw_b))


def inverse_params(omega_s, omega_a, omega_b):
    """Despara-metrização: valores efetivos de volta para os parâmetros brutos"""
    return torch.logit(_como_tensor(omega_s)), softplus_inverse(omega_a), softplus_inverse(-_como_tensor(omega_b))


# --- Confiança e superposição -------------------------------------------------

def compute_lambda(p, omega_s, omega_a, omega_b):
    """λ = ω_s · sigmoid(ω_a · (−H(p) − ω_b)), com H(p) tratado como constante"""
    neg_h = -entropy(p.detach())
    return omega_s * torch.sigmoid(omega_a * (neg_h - omega_b))


def _candidatos(p, mask_id):
    # A máscara nunca é candidata: recebe -1 para ficar depois de qualquer massa real
    p = p.detach().clone()
    p[..., mask_id] = -1.0
    return p


def top_k_weights(p, k, mask_id):
    """Os k ids mais prováveis (sem a máscara) com pesos renormalizados; empate pelo menor id"""
    if k < 1 or k >= p.shape[-1]:
        raise DomainError(f"k={k} deve satisfazer 1 <= k < |V|")
    valores, ids = torch.sort(_candidatos(p, mask_id), dim=-1, descending=True, stable=True)
    ids, valores = ids[..., :k], valores[..., :k].clamp_min(0.0)
    massa = valores.sum(-1, keepdim=True)
    if bool((massa <= 0).any()):
        raise NumericalError("degenerate distribution")
    return ids, valores / massa


def softmax_temperature_weights(p, temperature, mask_id):
    """Pesos ∝ p_i^(1/τ) sobre todos os tokens que não são a máscara"""
    tau = _como_tensor(temperature)
    if bool((tau <= 0).any()):
        raise DomainError("a temperatura deve ser positiva")
    p = p.detach()
    V = p.shape[-1]
    ids = torch.tensor([i for i in range(V) if i != mask_id], dtype=torch.long)
    q = p[..., ids]
    if bool((q.sum(-1) <= 0).any()):
        raise NumericalError("degenerate distribution")
    # -inf aplicado após a divisão por τ mantém finito o gradiente de τ
    logq = torch.log(q.clamp_min(EPSILON_LOG)) / tau.to(q.dtype)
    logits = torch.where(q > 0, logq, torch.full_like(logq, float("-inf")))
    pesos = torch.softmax(logits, dim=-1)
    return ids.expand(q.shape).contiguous(), pesos


def td_multiplier(step, total, td):
    """Multiplicador de λ no passo reverso `step` (contado de T até 1)"""
    if not 1 <= step <= total:
        raise DomainError(f"passo {step} fora de [1, {total}]")
    modo = "none" if td is None else td.mode
    if modo == "none":
        return 1.0
    if modo == "stepwise_sm_to_binary":
        return 1.0 if step >= td.threshold * total else 0.0
    if modo == "stepwise_binary_to_sm":
        return 1.0 if step <= td.threshold * total else 0.0
    if modo == "linear_sm_to_binary":
        return step / total
    if modo == "linear_binary_to_sm":
        return 1.0 - step / total
    raise DomainError(f"modo de dependência temporal desconhecido: {modo}")


def soft_mask_mixture(x_hat, lam, ids, weights, mask_id):
    """Mistura convexa: máscaras retidas recebem (1-λ)·m + λ·Σ π_i v_i, reveladas ficam intactas"""
    retido = x_hat == mask_id
    suave = SoftInput(1.0 - lam, ids, lam.unsqueeze(-1) * weights)
    duro = SoftInput.from_tokens(x_hat, mask_id, dtype=weights.dtype)
    return suave.where(retido, duro)


class SoftMask(nn.Module):
    """Classe com os três parâmetros treináveis do soft-masking e a temperatura opcional"""

    def __init__(self, k=TOP_K, raw_s=RAW_S_INICIAL, raw_a=0.0, raw_b=0.0, temperature=TEMPERATURA_INICIAL):
        """
        Inicializa o módulo com valores brutos (pré-transformação)

        Args:
            k: número de tokens superpostos ou "full" para softmax com temperatura
            raw_s, raw_a, raw_b: parâmetros brutos de ω_s, ω_a, ω_b
            temperature: temperatura inicial efetiva (usada apenas no modo "full")
        """
        super().__init__()
        if k != FULL_SOFTMAX and int(k) < 1:
            raise DomainError("k deve ser >= 1 ou 'full'")
        self.k = k
        self.raw_s = nn.Parameter(torch.tensor(float(raw_s)))
        self.raw_a = nn.Parameter(torch.tensor(float(raw_a)))
        self.raw_b = nn.Parameter(torch.tensor(float(raw_b)))
        self.raw_tau = nn.Parameter(softplus_inverse(float(temperature)).float(), requires_grad=self.full_softmax)

    @property
    def full_softmax(self):
        return self.k == FULL_SOFTMAX

    def effective(self):
        return effective_params(self.raw_s, self.raw_a, self.raw_b)

    def temperature(self):
        return F.softplus(self.raw_tau)

    def trainable_parameters(self):
        """Parâmetros do grupo de otimização do SM (a temperatura só no modo softmax)"""
        params = [self.raw_s, self.raw_a, self.raw_b]
        if self.full_softmax:
            params.append(self.raw_tau)
        return params

    def lambda_(self, p):
        return compute_lambda(p, *self.effective())

    def superposition(self, p, mask_id):
        if self.full_softmax:
            return softmax_temperature_weights(p, self.temperature(), mask_id)
        return top_k_weights(p, int(self.k), mask_id)

    def forward(self, x_hat, p, mask_id, step=None, total=None, td=None):
        """apply_sm: realimentação das máscaras retidas a partir das probabilidades anteriores"""
        lam = self.lambda_(p)
        if step is not None:
            lam = lam * td_multiplier(step, total, td)
        ids, pesos = self.superposition(p, mask_id)
        return soft_mask_mixture(x_hat, lam, ids, pesos.to(lam.dtype), mask_id)

    def summary(self):
        """Valores brutos e efetivos para inspeção"""
        w_s, w_a, w_b = (float(v) for v in self.effective())
        resumo = {
            "raw_s": float(self.raw_s), "raw_a": float(self.raw_a), "raw_b": float(self.raw_b),
            "omega_s": w_s, "omega_a": w_a, "omega_b": w_b, "k": self.k,
        }
        if self.full_softmax:
            resumo["raw_tau"] = float(self.raw_tau)
            resumo["temperature"] = float(self.temperature())
        return resumo


def apply_sm(x_hat, p, params, mask_id, step=None, total=None, td=None):
    return params(x_hat, p, mask_id, step, total, td)


def init_params(entropy_lower_bound, vocab_size, k=TOP_K, raw_s=RAW_S_INICIAL, temperature=TEMPERATURA_INICIAL):
    """Inicialização: centro da sigmoide em LB/2, inclinação −10/LB, ω_s próximo de zero"""
    lb = float(entropy_lower_bound)
    if lb >= 0:
        raise DomainError("o limite inferior da entropia negativa deve ser < 0")
    if lb < -math.log(vocab_size):
        log_debug(f"LB={lb} abaixo de -ln|V|={-math.log(vocab_size):.4f}")
    if k != FULL_SOFTMAX and int(k) >= vocab_size:
        raise DomainError(f"k={k} deve ser menor que |V|={vocab_size}")
    _, raw_a, raw_b = inverse_params(0.5, -10.0 / lb, lb / 2.0)
    return SoftMask(k, raw_s, float(raw_a), float(raw_b), temperature)
