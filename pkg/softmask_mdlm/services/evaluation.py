"""
Serviço de avaliação: NELBO de validação (com as duas passadas quando o SM
está ligado), taxa de validade gramatical das amostras, divergência de
bigramas e a série temporal dos parâmetros do SM.
"""
import concurrent.futures
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
from tqdm import tqdm

from softmask_mdlm.config.settings import NUM_THREADS, VALIDACAO_T_MIN
from softmask_mdlm.core.errors import DomainError
from softmask_mdlm.core.schedule import corrupt
from softmask_mdlm.models.backbone import nll_per_sequence
from softmask_mdlm.models.vocab import strip_eos_suffix
from softmask_mdlm.services.corpus import grammar_check, split_prompt_response
from softmask_mdlm.services.decoding import decode
from softmask_mdlm.services.training import sample_time, two_pass_probs
from softmask_mdlm.utils.file_utils import derive_seed
from softmask_mdlm.utils.logger import log_avaliacao


@dataclass
class EvalReport:
    """Relatório plano de avaliação"""
    nelbo_per_masked_token: float
    nelbo_stderr: float
    perplexity: float
    grammar_validity_rate: Optional[float]
    bigram_kl: float
    sm_scale_effective: float
    sm_on: bool
    mc_samples: int
    n_samples: int
    seed: int
    config_fingerprint: str
    checkpoint_checksum: str = ""

    def to_dict(self):
        return asdict(self)


def validation_nelbo(model, softmask, janelas, mc_samples, sm_on, generator, batch_size=64, t_min=VALIDACAO_T_MIN):
    """
    Estimativa Monte Carlo da NELBO por token mascarável

    Cada janela recebe mc_samples sorteios de t ~ U(t_min, 1); o valor de um sorteio é
    (1/t) · Σ_mascarados NLL / L_mascarável, de modo que um modelo uniforme dá ln|V|.

    Args:
        model: Denoiser
        softmask: SoftMask (usado quando sm_on)
        janelas: Windows de validação
        mc_samples: sorteios por janela
        sm_on: usa o caminho de duas passadas
        generator: torch.Generator da estimativa

    Returns:
        Tupla (nelbo, erro padrão)
    """
    if mc_samples < 1:
        raise DomainError("mc_samples deve ser >= 1")
    if len(janelas) == 0:
        raise DomainError("conjunto de validação vazio")
    model.eval()
    valores = []
    with torch.no_grad():
        for _ in range(mc_samples):
            for inicio in range(0, len(janelas), batch_size):
                lote = janelas.select(torch.arange(inicio, min(inicio + batch_size, len(janelas))))
                t = sample_time(t_min, 1.0, generator, (lote.tokens.shape[0],))
                xt, mascara = corrupt(lote.tokens, t, generator, model.mask_id, lote.maskable)
                probs, _ = two_pass_probs(model, softmask, xt, t, sm_on, lote.valid)
                por_sequencia = nll_per_sequence(probs.to(torch.float64), lote.tokens, mascara, t)
                mascaraveis = lote.maskable.sum(-1).clamp_min(1).to(torch.float64)
                valores.append(por_sequencia / mascaraveis)
    valores = torch.cat(valores)
    nelbo = float(valores.mean())
    erro = float(valores.std(unbiased=True) / math.sqrt(valores.numel())) if valores.numel() > 1 else 0.0
    return nelbo, erro


def _validar_amostra(indice, model, softmask, spec, vocab, config, seed, prompts):
    prompt = prompts[indice % len(prompts)] if prompts else []
    generator = torch.Generator().manual_seed(derive_seed(seed, indice))
    resultado = decode(prompt, model, softmask, config, generator)
    sequencia = strip_eos_suffix(resultado.sequence, vocab.eos_id)
    valido = spec is not None and grammar_check(sequencia, spec, vocab)
    return valido, strip_eos_suffix(resultado.tokens, vocab.eos_id)


def grammar_validity_rate(model, softmask, spec, vocab, n_samples, config, seed=0, prompts=None, max_workers=None):
    """
    Fração de amostras decodificadas que passam em grammar_check

    Cada amostra usa um gerador próprio semeado por (seed, índice), então o resultado
    não depende da ordem de execução das threads.

    Args:
        spec: GrammarSpec da linguagem
        vocab: Vocab do modelo
        n_samples: número de amostras
        config: DecodeConfig
        prompts: lista opcional de prompts (ids) usados ciclicamente
        max_workers: threads do pool (padrão: SOFTMASK_THREADS ou automático)

    Returns:
        Tupla (taxa, lista de amostras geradas sem o sufixo de eos)
    """
    if n_samples < 1:
        raise DomainError("n_samples deve ser >= 1")
    max_workers = max_workers or NUM_THREADS or None
    tarefas = range(n_samples)
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
        resultados = list(tqdm(
            pool.map(lambda i: _validar_amostra(i, model, softmask, spec, vocab, config, seed, prompts), tarefas),
            total=n_samples, desc="Amostras", unit="amostra", leave=False,
        ))
    validos = sum(1 for ok, _ in resultados if ok)
    return validos / n_samples, [amostra for _, amostra in resultados]


def validation_prompts(corpus, spec):
    """Prompts condicionais extraídos do corpus de validação"""
    return [split_prompt_response(doc, spec, corpus.vocab)[0] for doc in corpus.sequences]


def _tabela_bigramas(sequencias, vocab_size):
    tabela = np.zeros((vocab_size, vocab_size), dtype=np.float64)
    for seq in sequencias:
        seq = np.asarray(seq, dtype=np.int64)
        if seq.size > 1:
            np.add.at(tabela, (seq[:-1], seq[1:]), 1.0)
    return tabela


def bigram_divergence(generated, reference, vocab_size):
    """KL(referência ‖ gerado) entre distribuições de bigramas com suavização add-one

    Args:
        generated: lista de sequências de ids
        reference: lista de sequências de ids
        vocab_size: tamanho da tabela |V| x |V|
    """
    if not generated or not reference:
        raise DomainError("os dois corpora devem ser não vazios")
    p = _tabela_bigramas(reference, vocab_size) + 1.0
    q = _tabela_bigramas(generated, vocab_size) + 1.0
    p /= p.sum()
    q /= q.sum()
    return max(0.0, float(np.sum(p * (np.log(p) - np.log(q)))))


def sm_trace_summary(registros):
    """Séries de (ω_s, ω_a, ω_b) efetivos por passo registrado, com valores inicial e final"""
    campos = ("omega_s", "omega_a", "omega_b")
    if not registros:
        raise DomainError("fluxo de métricas vazio")
    if any(c not in r for r in registros for c in campos):
        raise DomainError("as métricas não contêm os campos do SM")
    serie = {"step": [int(r["step"]) for r in registros]}
    for c in campos:
        serie[c] = [float(r[c]) for r in registros]
    serie["initial"] = {c: serie[c][0] for c in campos}
    serie["final"] = {c: serie[c][-1] for c in campos}
    return serie


def build_report(model, softmask, bundle, decode_config, eval_config, fingerprint, checksum=""):
    """Executa todas as métricas e monta o EvalReport"""
    generator = torch.Generator().manual_seed(eval_config.seed)
    nelbo, erro = validation_nelbo(model, softmask, bundle.valid_windows, eval_config.mc_samples,
                                   eval_config.sm_on, generator, t_min=eval_config.t_min)
    log_avaliacao(f"NELBO por token {nelbo:.4f} ± {erro:.4f} (SM {'ligado' if eval_config.sm_on else 'desligado'})")

    config = decode_config.model_copy(update={"sm_enabled": decode_config.sm_enabled and eval_config.sm_on})
    prompts = validation_prompts(bundle.validation, bundle.spec) if eval_config.prompted and bundle.spec else None
    taxa, amostras = grammar_validity_rate(model, softmask, bundle.spec, bundle.vocab, eval_config.n_samples,
                                           config, eval_config.seed, prompts)
    if bundle.spec is None:
        taxa = None
    else:
        log_avaliacao(f"Validade gramatical {taxa:.3f} em {eval_config.n_samples} amostras")
    kl = bigram_divergence(amostras, bundle.validation.sequences, bundle.vocab.size)
    log_avaliacao(f"KL de bigramas {kl:.4f}")
    return EvalReport(
        nelbo_per_masked_token=nelbo,
        nelbo_stderr=erro,
        perplexity=math.exp(nelbo),
        grammar_validity_rate=taxa,
        bigram_kl=kl,
        sm_scale_effective=float(softmask.effective()[0]),
        sm_on=eval_config.sm_on,
        mc_samples=eval_config.mc_samples,
        n_samples=eval_config.n_samples,
        seed=eval_config.seed,
        config_fingerprint=fingerprint,
        checkpoint_checksum=checksum,
    )
