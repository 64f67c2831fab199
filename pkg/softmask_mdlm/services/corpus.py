"""
Serviço de corpus: vocabulário, gramáticas sintéticas, corpora de texto,
empacotamento em janelas e preenchimento com eos para treino condicional.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from softmask_mdlm.config.settings import TOKEN_EOS, TOKEN_MASK
from softmask_mdlm.core.errors import DomainError
from softmask_mdlm.models.vocab import Corpus, GrammarSpec, Vocab, strip_eos_suffix
from softmask_mdlm.utils.logger import log_info, log_debug

COLCHETES = ("()", "[]", "{}", "<>")


def build_char_vocab(texto):
    """Vocabulário de caracteres em ordem de primeira ocorrência + eos e máscara"""
    if not texto:
        raise DomainError("empty corpus")
    return Vocab(tuple(dict.fromkeys(texto)) + (TOKEN_EOS, TOKEN_MASK))


def grammar_alphabet(spec):
    """Alfabeto de superfície de uma gramática"""
    if spec.kind == "mod_arith":
        return "0123456789+="
    return "".join(COLCHETES[:spec.alphabet_size])


def grammar_vocab(spec):
    return build_char_vocab(grammar_alphabet(spec))


# --- Aritmética modular -------------------------------------------------------

def _largura(spec):
    return len(str(max(spec.alphabet_size - 1, 0)))


def _gerar_aritmetica(spec, rng):
    # "a+b=c" com operandos de até w dígitos: 3w + 2 <= max_len
    w = _largura(spec)
    if 3 * w + 2 > spec.max_len:
        raise DomainError(f"max_len {spec.max_len} não comporta uma equação com dois operandos")
    a, b = (int(x) for x in rng.integers(0, spec.alphabet_size, size=2))
    return f"{a}+{b}={(a + b) % spec.alphabet_size}"


def _checar_aritmetica(texto, spec):
    esquerda, sep, direita = texto.partition("=")
    if not sep:
        return False
    termos = esquerda.split("+")
    if len(termos) != 2:
        return False
    for num in termos + [direita]:
        # Sem zeros à esquerda e sempre um resíduo válido
        if not num.isdigit() or (len(num) > 1 and num[0] == "0"):
            return False
        if int(num) >= spec.alphabet_size:
            return False
    return sum(int(x) for x in termos) % spec.alphabet_size == int(direita)


# --- Colchetes balanceados ----------------------------------------------------

def _gerar_colchetes(spec, rng):
    if spec.max_len < 2:
        raise DomainError("max_len deve comportar ao menos um par de colchetes")
    pares = int(rng.integers(1, spec.max_len // 2 + 1))
    tipos = COLCHETES[:spec.alphabet_size]
    saida, pilha, abertos = [], [], 0
    while abertos < pares or pilha:
        if abertos < pares and (not pilha or rng.random() < 0.5):
            par = tipos[int(rng.integers(0, len(tipos)))]
            saida.append(par[0])
            pilha.append(par[1])
            abertos += 1
        else:
            saida.append(pilha.pop())
    return "".join(saida)


def _checar_colchetes(texto, spec):
    tipos = COLCHETES[:spec.alphabet_size]
    fecha = {p[1]: p[0] for p in tipos}
    pilha = []
    for c in texto:
        if c in fecha:
            if not pilha or pilha.pop() != fecha[c]:
                return False
        elif any(c == p[0] for p in tipos):
            pilha.append(c)
        else:
            return False
    return bool(texto) and not pilha


def gen_synthetic(spec, n, seed, split="train"):
    """Gera n documentos válidos para a gramática; reprodutível a partir da semente"""
    if n < 1:
        raise DomainError("n deve ser >= 1")
    rng = np.random.default_rng(seed)
    vocab = grammar_vocab(spec)
    gerador = _gerar_aritmetica if spec.kind == "mod_arith" else _gerar_colchetes
    return Corpus([vocab.tokenize(gerador(spec, rng)) for _ in range(n)], split, vocab)


def grammar_check(seq, spec, vocab=None):
    """Verdadeiro se a sequência (sem o sufixo de eos) pertence à linguagem"""
    vocab = vocab or grammar_vocab(spec)
    try:
        ids = strip_eos_suffix([int(i) for i in seq], vocab.eos_id)
    except (TypeError, ValueError):
        return False
    # eos ou máscara no meio do texto invalidam a amostra
    if any(not 0 <= i < vocab.eos_id for i in ids):
        return False
    texto = vocab.detokenize(ids)
    if len(texto) > spec.max_len:
        return False
    if spec.kind == "mod_arith":
        return _checar_aritmetica(texto, spec)
    return _checar_colchetes(texto, spec)


def split_prompt_response(seq, spec, vocab):
    """Divide um documento em contexto e resposta (aritmética: até o '=' inclusive)"""
    seq = list(seq)
    if spec.kind == "mod_arith":
        corte = seq.index(vocab.tokenize("=")[0]) + 1
    else:
        corte = len(seq) // 2
    return seq[:corte], seq[corte:]


# --- Corpora de texto ---------------------------------------------------------

def _ler_linhas(caminho):
    try:
        linhas = Path(caminho).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DomainError(f"não foi possível ler o corpus '{caminho}': {e}") from e
    return [l for l in linhas if l]


def load_text_corpora(train_path, valid_path=None, valid_fraction=0.05):
    """Lê arquivos UTF-8 (um documento por linha) e tokeniza em caracteres"""
    treino = _ler_linhas(train_path)
    if valid_path:
        validacao = _ler_linhas(valid_path)
    else:
        corte = max(1, int(len(treino) * valid_fraction))
        treino, validacao = treino[:-corte] or treino, treino[-corte:]
    vocab = build_char_vocab("".join(treino + validacao))
    log_info(f"Corpus de texto: {len(treino)} documentos de treino, {len(validacao)} de validação, |V|={vocab.size}")
    return (
        vocab,
        Corpus([vocab.tokenize(d) for d in treino], "train", vocab),
        Corpus([vocab.tokenize(d) for d in validacao], "validation", vocab),
    )


# --- Janelas de comprimento fixo ----------------------------------------------

def pad_with_eos(resposta, n_max, rng, eos_id):
    """Acrescenta n_end ~ Uniforme{0..n_max} tokens eos; retorna (sequência, n_end)"""
    if n_max < 0:
        raise DomainError("n_max deve ser >= 0")
    n_end = int(rng.integers(0, n_max + 1))
    return list(resposta) + [eos_id] * n_end, n_end


def pack_sequences(corpus, L):
    """Concatena documentos separados por um eos e corta em janelas de tamanho L"""
    if L < 2:
        raise DomainError("L deve ser >= 2")
    eos_id = corpus.vocab.eos_id
    fluxo = []
    for doc in corpus.sequences:
        fluxo.extend(doc)
        fluxo.append(eos_id)
    if len(fluxo) < L:
        raise DomainError("insufficient data")
    # A janela parcial final é descartada
    return [fluxo[i:i + L] for i in range(0, len(fluxo) - L + 1, L)]


@dataclass
class Windows:
    """Janelas de comprimento fixo prontas para o treino"""
    tokens: torch.Tensor          # (N, L) long
    maskable: torch.Tensor        # (N, L) bool: posições que a corrupção pode mascarar
    valid: torch.Tensor           # (N, L) bool: posições reais (fora do preenchimento)

    def __len__(self):
        return self.tokens.shape[0]

    def select(self, indices):
        return Windows(self.tokens[indices], self.maskable[indices], self.valid[indices])

    @classmethod
    def from_lists(cls, janelas):
        tokens = torch.tensor(janelas, dtype=torch.long)
        cheio = torch.ones_like(tokens, dtype=torch.bool)
        return cls(tokens, cheio, cheio.clone())


def frame_documents(corpus, L):
    """Um documento por janela, seguido de eos até o comprimento L"""
    eos_id = corpus.vocab.eos_id
    janelas = [doc + [eos_id] * (L - len(doc)) for doc in corpus.sequences if len(doc) <= L]
    descartados = len(corpus) - len(janelas)
    if descartados:
        log_debug(f"{descartados} documentos maiores que L={L} descartados")
    if not janelas:
        raise DomainError("insufficient data")
    return Windows.from_lists(janelas)


def conditional_windows(corpus, spec, L, n_max, rng):
    """Contexto + resposta + n_end eos; apenas a resposta e o eos podem ser mascarados

    As posições após o eos sorteado são preenchimento: ficam fora da atenção e da perda.
    """
    vocab = corpus.vocab
    tokens, maskable, valid = [], [], []
    for doc in corpus.sequences:
        contexto, resposta = split_prompt_response(doc, spec, vocab)
        resposta, _ = pad_with_eos(resposta, n_max, rng, vocab.eos_id)
        n = len(contexto) + len(resposta)
        if n > L:
            continue
        tokens.append(contexto + resposta + [vocab.eos_id] * (L - n))
        maskable.append([False] * len(contexto) + [True] * len(resposta) + [False] * (L - n))
        valid.append([True] * n + [False] * (L - n))
    if not tokens:
        raise DomainError("insufficient data")
    return Windows(
        torch.tensor(tokens, dtype=torch.long),
        torch.tensor(maskable, dtype=torch.bool),
        torch.tensor(valid, dtype=torch.bool),
    )


@dataclass
class CorpusBundle:
    """Vocabulário, corpora e janelas de uma execução"""
    vocab: Vocab
    train: Corpus
    validation: Corpus
    train_windows: Windows
    valid_windows: Windows
    spec: Optional[GrammarSpec] = None


class CorpusBuilder:
    """Classe para montar os dados de uma execução a partir da configuração"""

    def __init__(self, config):
        """
        Inicializa o construtor de corpus

        Args:
            config: CorpusConfig com origem, modo de janelas e sementes
        """
        self.config = config

    def grammar_spec(self):
        if self.config.source != "grammar":
            return None
        return GrammarSpec(self.config.grammar_kind, self.config.alphabet_size, self.config.grammar_max_len)

    def construir(self):
        """Gera ou lê os corpora e monta as janelas de treino e validação"""
        cfg = self.config
        spec = self.grammar_spec()
        if spec is not None:
            treino = gen_synthetic(spec, cfg.n_train, cfg.seed)
            validacao = gen_synthetic(spec, cfg.n_valid, cfg.seed + 1, split="validation")
            vocab = treino.vocab
            log_info(f"Gramática {spec.kind} (alfabeto {spec.alphabet_size}): "
                     f"{len(treino)} documentos de treino, {len(validacao)} de validação, |V|={vocab.size}")
        else:
            vocab, treino, validacao = load_text_corpora(cfg.train_path, cfg.valid_path)

        rng = np.random.default_rng(cfg.seed)
        if cfg.mode == "packed":
            janelas_treino = Windows.from_lists(pack_sequences(treino, cfg.seq_len))
            janelas_valid = Windows.from_lists(pack_sequences(validacao, cfg.seq_len))
        elif cfg.mode == "conditional":
            janelas_treino = conditional_windows(treino, spec, cfg.seq_len, cfg.eos_pad_max, rng)
            janelas_valid = conditional_windows(validacao, spec, cfg.seq_len, cfg.eos_pad_max, rng)
        else:
            janelas_treino = frame_documents(treino, cfg.seq_len)
            janelas_valid = frame_documents(validacao, cfg.seq_len)
        log_info(f"Janelas ({cfg.mode}, L={cfg.seq_len}): {len(janelas_treino)} treino, {len(janelas_valid)} validação")
        return CorpusBundle(vocab, treino, validacao, janelas_treino, janelas_valid, spec)
