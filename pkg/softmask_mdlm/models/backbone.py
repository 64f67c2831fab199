"""
Denoiser bidirecional (Transformer sem máscara causal) que recebe misturas
convexas de embeddings, com condicionamento opcional no tempo de difusão.
Inclui a perda mascarada ponderada por 1/t e as utilidades de gradiente.
"""
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from softmask_mdlm.config.settings import EPSILON_LOG
from softmask_mdlm.core.errors import DomainError, NumericalError
from softmask_mdlm.models.soft_input import SoftInput, embed_mixture
from softmask_mdlm.utils.logger import log_debug


class EncoderBlock(nn.Module):
    """Bloco pré-norm: atenção completa multi-cabeça + MLP com GELU"""

    def __init__(self, dim, heads, dropout=0.0):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.ln2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, 4 * dim)
        self.fc2 = nn.Linear(4 * dim, dim)
        self.drop = nn.Dropout(dropout) if dropout > 0 else nn.Identity()

    def _atencao(self, x, valid):
        B, L, D = x.shape
        hd = D // self.heads
        q, k, v = self.qkv(x).split(D, dim=-1)
        q, k, v = (z.view(B, L, self.heads, hd).transpose(1, 2) for z in (q, k, v))
        scores = q @ k.transpose(-2, -1) / math.sqrt(hd)
        if valid is not None:
            # Chaves de preenchimento ficam fora da atenção
            scores = scores.masked_fill(~valid[:, None, None, :], float("-inf"))
        pesos = torch.softmax(scores, dim=-1)
        return self.out((pesos @ v).transpose(1, 2).reshape(B, L, D))

    def forward(self, x, valid=None):
        x = x + self.drop(self._atencao(self.ln1(x), valid))
        return x + self.drop(self.fc2(F.gelu(self.fc1(self.ln2(x)))))


class Denoiser(nn.Module):
    """Classe do modelo g_θ: misturas de embeddings -> distribuições por posição"""

    def __init__(self, config, mask_id):
        """
        Inicializa o denoiser

        Args:
            config: BackboneConfig com vocab_size preenchido
            mask_id: id do token de máscara no vocabulário
        """
        super().__init__()
        if config.vocab_size is None:
            raise DomainError("BackboneConfig.vocab_size precisa ser definido")
        self.config = config
        self.mask_id = mask_id
        D = config.model_dim
        self.tok_emb = nn.Embedding(config.vocab_size, D)
        self.pos_emb = nn.Embedding(config.max_len, D)
        self.time_emb = nn.Embedding(config.time_bins, D) if config.time_conditioned else None
        self.blocks = nn.ModuleList(EncoderBlock(D, config.heads, config.dropout) for _ in range(config.layers))
        self.ln_f = nn.LayerNorm(D)
        self.head = nn.Linear(D, config.vocab_size)
        self.drop = nn.Dropout(config.dropout) if config.dropout > 0 else nn.Identity()
        self.apply(self._inicializar)

    @staticmethod
    def _inicializar(modulo):
        if isinstance(modulo, nn.Linear):
            nn.init.normal_(modulo.weight, std=0.02)
            nn.init.zeros_(modulo.bias)
        elif isinstance(modulo, nn.Embedding):
            nn.init.normal_(modulo.weight, std=0.02)

    def time_index(self, t, batch):
        """Posição de t na grade discreta do embedding de tempo"""
        t = torch.as_tensor(t, dtype=torch.float64).reshape(-1)
        if t.numel() == 1:
            t = t.expand(batch)
        if bool(((t < 0) | (t > 1)).any()):
            raise DomainError("t fora de [0, 1]")
        return torch.round(t * (self.config.time_bins - 1)).long()

    def forward(self, entrada, t=None, valid=None, check=True):
        """
        Calcula p^{1:L} = g_θ(x^{1:L})

        Args:
            entrada: SoftInput com formato (B, L) ou (L,)
            t: tempo por sequência; obrigatório se e somente se time_conditioned
            valid: (B, L) bool opcional; posições False ficam fora da atenção
            check: valida as invariantes do simplex antes de embutir

        Returns:
            Tensor (B, L, |V|) de probabilidades normalizadas
        """
        if entrada.mask_weight.dim() == 1:
            entrada = SoftInput(entrada.mask_weight[None], entrada.token_ids[None], entrada.token_weights[None])
        B, L = entrada.mask_weight.shape
        if L > self.config.max_len:
            raise DomainError(f"comprimento {L} excede max_len {self.config.max_len}")
        if self.time_emb is None and t is not None:
            raise DomainError("t fornecido a um modelo sem condicionamento no tempo")
        if self.time_emb is not None and t is None:
            raise DomainError("modelo condicionado no tempo exige t")

        x = embed_mixture(entrada, self.tok_emb.weight, self.mask_id, check=check)
        x = x + self.pos_emb.weight[:L]
        if self.time_emb is not None:
            x = x + self.time_emb(self.time_index(t, B))[:, None, :]
        x = self.drop(x)
        for bloco in self.blocks:
            x = bloco(x, valid)
        return torch.softmax(self.head(self.ln_f(x)), dim=-1)


def analytic_param_count(config):
    """Contagem fechada: embeddings + blocos (12D² + 13D cada) + LN final + cabeça"""
    V, D = config.vocab_size, config.model_dim
    total = V * D + config.max_len * D
    if config.time_conditioned:
        total += config.time_bins * D
    total += config.layers * (12 * D * D + 13 * D)
    return total + 2 * D + D * V + V


def nll_per_sequence(probs, x0, mask, t, epsilon=EPSILON_LOG):
    """−(1/t) Σ_{i mascarado} log p_i[x0_i] por sequência

    Args:
        probs: (B, L, |V|) ou (L, |V|)
        x0: ids limpos (B, L) ou (L,)
        mask: indicador de máscara no mesmo formato de x0
        t: escalar ou tensor (B,) com t > 0

    Returns:
        Tensor (B,)
    """
    if probs.dim() == 2:
        probs, x0, mask = probs[None], x0[None], mask[None]
    t = torch.as_tensor(t, dtype=probs.dtype).reshape(-1)
    if bool((t <= 0).any()):
        raise DomainError("a perda exige t > 0")
    alvo = probs.gather(-1, x0.unsqueeze(-1)).squeeze(-1)
    abaixo = (alvo < epsilon) & mask
    if bool(abaixo.any()):
        log_debug(f"{int(abaixo.sum())} probabilidades abaixo do piso {epsilon} foram limitadas")
    logp = torch.log(alvo.clamp_min(epsilon))
    return -(logp * mask.to(probs.dtype)).sum(-1) / t.expand(probs.shape[0])


def loss(probs, x0, mask_indicator, t):
    """Perda do lote: média sobre as sequências da NLL mascarada ponderada por 1/t"""
    return nll_per_sequence(probs, x0, mask_indicator, t).mean()


def collect_gradients(modulos):
    """Gradientes nomeados de todos os parâmetros treináveis que participaram do grafo"""
    gradientes = {}
    for prefixo, modulo in modulos.items():
        for nome, param in modulo.named_parameters():
            if param.grad is None:
                continue
            chave = f"{prefixo}.{nome}"
            if not bool(torch.isfinite(param.grad).all()):
                raise NumericalError("gradiente não finito", parametro=chave)
            gradientes[chave] = param.grad
    return gradientes


def finite_difference_check(funcao, parametros, passo=1e-4):
    """Compara o gradiente analítico com diferenças centrais, parâmetro a parâmetro

    Args:
        funcao: callable sem argumentos que devolve a perda escalar
        parametros: dict nome -> nn.Parameter (de preferência em float64)
        passo: incremento das diferenças centrais

    Returns:
        dict nome -> erro relativo ||g_a - g_n|| / max(||g_a|| + ||g_n||, 1e-12)
    """
    for p in parametros.values():
        p.grad = None
    funcao().backward()
    analiticos = {nome: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
                  for nome, p in parametros.items()}
    erros = {}
    with torch.no_grad():
        for nome, p in parametros.items():
            numerico = torch.zeros_like(p)
            plano, grad_plano = p.view(-1), numerico.view(-1)
            for i in range(plano.numel()):
                original = plano[i].item()
                plano[i] = original + passo
                mais = funcao().item()
                plano[i] = original - passo
                menos = funcao().item()
                plano[i] = original
                grad_plano[i] = (mais - menos) / (2 * passo)
            diferenca = (analiticos[nome] - numerico).norm()
            escala = analiticos[nome].norm() + numerico.norm()
            erros[nome] = float(diferenca / max(float(escala), 1e-12))
    return erros
