"""
Serviço de decodificação: processo reverso iterativo com estratégias de
revelação, amostragem de tokens e realimentação soft-masking entre passos.
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional

import torch

from softmask_mdlm.core.errors import DomainError, NumericalError
from softmask_mdlm.core.schedule import reveal_probability
from softmask_mdlm.core.softmask import entropy
from softmask_mdlm.models.soft_input import SoftInput
from softmask_mdlm.utils.logger import log_decodificacao


def steps_from_budget(budget, L):
    """T = round(budget · L) com arredondamento para cima no meio, no mínimo 1"""
    if not 0.0 < budget <= 1.0:
        raise DomainError(f"orçamento de NFE deve estar em (0, 1]: {budget}")
    if L < 1:
        raise DomainError("L deve ser >= 1")
    return max(1, math.floor(budget * L + 0.5))


# --- Amostragem de tokens -----------------------------------------------------

def _sem_mascara(p, mask_id):
    p = p.detach().to(torch.float64).reshape(-1, p.shape[-1]).clone()
    if mask_id is not None:
        p[:, mask_id] = 0.0
    if bool((p.sum(-1) <= 0).any()):
        raise NumericalError("nucleus set empty")
    return p


def nucleus_distribution(p, temperature=1.0, top_p=1.0, mask_id=None):
    """Distribuição renormalizada sobre o menor prefixo ordenado com massa >= top_p

    Returns:
        Tensor (N, |V|) com zeros fora do núcleo
    """
    if temperature <= 0:
        raise DomainError("a temperatura deve ser positiva")
    if not 0.0 < top_p <= 1.0:
        raise DomainError("top_p deve estar em (0, 1]")
    p = _sem_mascara(p, mask_id)
    logp = torch.where(p > 0, torch.log(p), torch.full_like(p, float("-inf")))
    q = torch.softmax(logp / temperature, dim=-1)
    ordenado, ids = torch.sort(q, dim=-1, descending=True, stable=True)
    # Um token entra se a massa acumulada antes dele ainda não atingiu top_p
    antes = torch.cumsum(ordenado, dim=-1) - ordenado
    mantido = torch.where((antes < top_p) & (ordenado > 0), ordenado, torch.zeros_like(ordenado))
    nucleo = torch.zeros_like(q).scatter(-1, ids, mantido)
    return nucleo / nucleo.sum(-1, keepdim=True)


def sample_token(p, sampler="argmax", generator=None, temperature=1.0, top_p=1.0, mask_id=None):
    """Amostra um token por linha de p; a máscara nunca é escolhida

    Args:
        p: (|V|,) ou (N, |V|) probabilidades normalizadas
        sampler: "argmax" (determinístico, empate pelo menor id) ou "nucleus"
        generator: torch.Generator usado no modo nucleus

    Returns:
        int para entrada 1-D, tensor (N,) caso contrário
    """
    unico = p.dim() == 1
    if sampler == "argmax":
        ids = _sem_mascara(p, mask_id).argmax(-1)
    elif sampler == "nucleus":
        nucleo = nucleus_distribution(p, temperature, top_p, mask_id)
        ids = torch.multinomial(nucleo, 1, generator=generator).squeeze(-1)
    else:
        raise DomainError(f"amostrador desconhecido: {sampler}")
    return int(ids[0]) if unico else ids


# --- Estado e estratégias -----------------------------------------------------

@dataclass
class SequenceState:
    """Tokens atuais (máscara onde ainda não revelado), prefixo congelado e realimentação"""
    tokens: torch.Tensor                  # (P + L,) long
    prompt_len: int
    mask_id: int
    feedback: Optional[SoftInput] = None  # None equivale a máscaras puras

    @classmethod
    def initial(cls, prompt, length, mask_id):
        prompt = [int(i) for i in (prompt or [])]
        if mask_id in prompt:
            raise DomainError("o prompt não pode conter o token de máscara")
        tokens = torch.tensor(prompt + [mask_id] * length, dtype=torch.long)
        return cls(tokens, len(prompt), mask_id)

    def masked(self):
        return self.tokens == self.mask_id

    def num_masked(self):
        return int(self.masked().sum())

    def model_input(self, dtype):
        if self.feedback is not None:
            return self.feedback
        return SoftInput.from_tokens(self.tokens, self.mask_id, dtype=dtype)


def _passos_restantes(s, t):
    # Na grade uniforme t = i/T e s = (i-1)/T, logo t/(t-s) = i
    return max(1, int(round(t / (t - s))))


def select_reveals_random(state, s, t, generator):
    """Cada posição mascarada é revelada independentemente com probabilidade reveal_probability(s, t)"""
    prob = reveal_probability(s, t)
    u = torch.rand(state.tokens.shape, generator=generator, dtype=torch.float64)
    return state.masked() & (u < prob)


def select_reveals_entropy(state, probs, s, t):
    """As n posições mascaradas de menor entropia, n = ceil(restantes / passos restantes)"""
    mascarado = state.masked()
    restantes = int(mascarado.sum())
    if restantes == 0:
        raise DomainError("nenhuma posição mascarada para revelar")
    n = min(restantes, math.ceil(restantes / _passos_restantes(s, t)))
    h = entropy(probs.detach().to(torch.float64))
    h = torch.where(mascarado, h, torch.full_like(h, float("inf")))
    ordem = torch.sort(h, stable=True).indices[:n]
    selecao = torch.zeros_like(mascarado)
    selecao[ordem] = True
    return selecao


@dataclass
class DecodeResult:
    tokens: List[int]                     # as L posições geradas
    sequence: List[int]                   # prompt + geração
    trace: List[dict] = field(default_factory=list)


def decode_step(state, model, softmask, config, s, t, step, total, generator):
    """
    Um passo reverso: forward, escolha das revelações, amostragem e realimentação

    Args:
        state: SequenceState atual
        model: Denoiser
        softmask: SoftMask ou None
        config: DecodeConfig
        s, t: tempos de destino e de partida (s < t)
        step, total: índice reverso do passo (T..1) e T
        generator: torch.Generator da decodificação

    Returns:
        Tupla (novo SequenceState, registro de trace)
    """
    if not s < t:
        raise DomainError(f"exige s < t (recebido s={s}, t={t})")
    dtype = next(model.parameters()).dtype
    mask_id = state.mask_id
    mascarado = state.masked()
    t_modelo = torch.tensor([t], dtype=torch.float64) if model.time_emb is not None else None
    with torch.no_grad():
        probs = model(state.model_input(dtype), t_modelo)[0]

    if config.strategy == "schedule_random":
        selecao = select_reveals_random(state, s, t, generator)
    else:
        selecao = select_reveals_entropy(state, probs, s, t)
    selecao[:state.prompt_len] = False

    tokens = state.tokens.clone()
    posicoes = selecao.nonzero().squeeze(-1)
    if posicoes.numel():
        tokens[posicoes] = sample_token(probs[posicoes], config.sampler, generator,
                                        config.temperature, config.top_p, mask_id).reshape(-1)

    retido = tokens == mask_id
    feedback, lam = None, None
    if config.sm_enabled and softmask is not None and bool(retido.any()):
        with torch.no_grad():
            feedback = softmask(tokens, probs, mask_id, step, total, config.td)
            lam = (1.0 - feedback.mask_weight)[retido]
    h_mascarado = entropy(probs.detach().to(torch.float64))[mascarado]
    registro = {
        "step": step,
        "revealed": int(posicoes.numel()),
        "masked_remaining": int(retido.sum()),
        "lambda_mean": float(lam.mean()) if lam is not None else 0.0,
        "lambda_max": float(lam.max()) if lam is not None else 0.0,
        "entropy_mean": float(h_mascarado.mean()) if h_mascarado.numel() else 0.0,
    }
    return SequenceState(tokens, state.prompt_len, mask_id, feedback), registro


def decode(prompt, model, softmask, config, generator=None):
    """
    Gera L tokens condicionados a um prompt opcional

    Args:
        prompt: lista de ids (ou None)
        model: Denoiser
        softmask: SoftMask ou None
        config: DecodeConfig
        generator: torch.Generator; por padrão semeado com config.seed

    Returns:
        DecodeResult com os tokens gerados, a sequência completa e o trace
    """
    prompt = list(prompt or [])
    if len(prompt) + config.length > model.config.max_len:
        raise DomainError(f"prompt ({len(prompt)}) + L ({config.length}) excede max_len {model.config.max_len}")
    total = config.total_steps()
    if config.strategy == "entropy_count" and total > config.length:
        raise DomainError("entropy_count exige T <= L")
    generator = generator or torch.Generator().manual_seed(config.seed)
    model.eval()

    estado = SequenceState.initial(prompt, config.length, model.mask_id)
    trace = []
    for i in range(total, 0, -1):
        estado, registro = decode_step(estado, model, softmask, config, (i - 1) / total, i / total, i, total, generator)
        trace.append(registro)
    if estado.num_masked():
        raise NumericalError(f"{estado.num_masked()} posições continuam mascaradas ao final")
    sequencia = estado.tokens.tolist()
    return DecodeResult(sequencia[len(prompt):], sequencia, trace)


class Decoder:
    """Classe que gera texto a partir de um modelo treinado e seu vocabulário"""

    def __init__(self, model, softmask, vocab, config):
        """
        Inicializa o decodificador

        Args:
            model: Denoiser treinado
            softmask: SoftMask (usado apenas se config.sm_enabled)
            vocab: Vocab do corpus de treino
            config: DecodeConfig
        """
        self.model = model
        self.softmask = softmask
        self.vocab = vocab
        self.config = config

    def gerar(self, prompt_texto=None, seed=None):
        """Decodifica uma amostra; retorna (texto sem o sufixo de eos, DecodeResult)"""
        prompt = self.vocab.tokenize(prompt_texto) if prompt_texto else []
        generator = torch.Generator().manual_seed(self.config.seed if seed is None else seed)
        resultado = decode(prompt, self.model, self.softmask, self.config, generator)
        texto = self.vocab.detokenize(resultado.sequence, strip_eos=True)
        log_decodificacao(f"{len(resultado.trace)} passos, SM {'ligado' if self.config.sm_enabled else 'desligado'}, "
                          f"estratégia {self.config.strategy}")
        return texto, resultado
