"""
Entrada suave: mistura convexa por posição entre o embedding da máscara e
alguns tokens do vocabulário. Tokens revelados e máscaras puras são casos
particulares da mesma representação esparsa.
"""
from dataclasses import dataclass

import torch

from softmask_mdlm.config.settings import TOLERANCIA_SIMPLEX_F32, TOLERANCIA_SIMPLEX_F64
from softmask_mdlm.core.errors import DomainError


def simplex_tolerance(dtype):
    return TOLERANCIA_SIMPLEX_F64 if dtype == torch.float64 else TOLERANCIA_SIMPLEX_F32


@dataclass
class SoftInput:
    """Mistura esparsa por posição

    mask_weight: (..., L) peso da máscara
    token_ids: (..., L, K) ids das entradas (ids com peso 0 são preenchimento)
    token_weights: (..., L, K) pesos das entradas
    """
    mask_weight: torch.Tensor
    token_ids: torch.Tensor
    token_weights: torch.Tensor

    @classmethod
    def from_tokens(cls, tokens, mask_id, dtype=torch.float32):
        """Entrada binária: tokens revelados viram misturas duras, máscaras ficam puras"""
        mascarado = tokens == mask_id
        mask_weight = mascarado.to(dtype)
        ids = torch.where(mascarado, torch.zeros_like(tokens), tokens).unsqueeze(-1)
        return cls(mask_weight, ids, (1.0 - mask_weight).unsqueeze(-1))

    @property
    def width(self):
        return self.token_ids.shape[-1]

    def pad_to(self, k):
        """Completa as entradas com pesos zero até a largura k"""
        falta = k - self.width
        if falta <= 0:
            return self
        forma = self.token_ids.shape[:-1] + (falta,)
        return SoftInput(
            self.mask_weight,
            torch.cat([self.token_ids, torch.zeros(forma, dtype=self.token_ids.dtype)], dim=-1),
            torch.cat([self.token_weights, torch.zeros(forma, dtype=self.token_weights.dtype)], dim=-1),
        )

    def where(self, condicao, outro):
        """Seleciona por posição entre self (condição verdadeira) e outro"""
        k = max(self.width, outro.width)
        a, b = self.pad_to(k), outro.pad_to(k)
        c = condicao.unsqueeze(-1)
        return SoftInput(
            torch.where(condicao, a.mask_weight, b.mask_weight),
            torch.where(c, a.token_ids, b.token_ids),
            torch.where(c, a.token_weights, b.token_weights),
        )

    def validate(self, mask_id):
        """Verifica as invariantes do simplex; lança DomainError se violadas"""
        with torch.no_grad():
            tol = simplex_tolerance(self.token_weights.dtype)
            total = self.mask_weight + self.token_weights.sum(-1)
            if bool(((total - 1.0).abs() > tol).any()):
                desvio = float((total - 1.0).abs().max())
                raise DomainError(f"pesos da mistura não somam 1 (desvio máximo {desvio:.3e})")
            if bool((self.mask_weight < 0).any()) or bool((self.token_weights < 0).any()):
                raise DomainError("pesos da mistura devem ser não negativos")
            ativos = self.token_weights > 0
            if bool((ativos & (self.token_ids == mask_id)).any()):
                raise DomainError("entradas da mistura não podem apontar para a máscara")
            if self.width > 1:
                ids = torch.where(ativos, self.token_ids, -1 - torch.arange(self.width))
                ordenados = ids.sort(dim=-1).values
                if bool((ordenados[..., 1:] == ordenados[..., :-1]).any()):
                    raise DomainError("ids das entradas da mistura devem ser distintos")

    def to_dense(self, vocab_size, mask_id):
        """Caminho de referência denso (..., L, |V|), usado em testes"""
        denso = torch.zeros(self.mask_weight.shape + (vocab_size,), dtype=self.token_weights.dtype)
        denso = denso.scatter_add(-1, self.token_ids, self.token_weights)
        denso[..., mask_id] += self.mask_weight
        return denso


def embed_mixture(entrada, embeddings, mask_id, check=True):
    """mask_weight * E[mask] + soma_i weight_i * E[id_i] para cada posição"""
    if check:
        entrada.validate(mask_id)
    pesos = entrada.token_weights.to(embeddings.dtype)
    vetores = embeddings[entrada.token_ids]                       # (..., L, K, D)
    soma = (pesos.unsqueeze(-1) * vetores).sum(-2)
    return entrada.mask_weight.to(embeddings.dtype).unsqueeze(-1) * embeddings[mask_id] + soma
