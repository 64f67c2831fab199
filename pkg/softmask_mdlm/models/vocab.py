"""
Modelos de dados do corpus: vocabulário de caracteres, corpus tokenizado e
especificação das gramáticas sintéticas.
"""
from dataclasses import dataclass, field
from typing import List, Literal, Tuple

from softmask_mdlm.config.settings import TOKEN_EOS, TOKEN_MASK
from softmask_mdlm.core.errors import DomainError


@dataclass(frozen=True)
class Vocab:
    """Vocabulário em nível de caractere com eos e máscara nos dois maiores ids"""
    tokens: Tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) < 3:
            raise DomainError("vocabulário precisa de ao menos um símbolo de conteúdo e os dois especiais")
        if len(set(self.tokens)) != len(self.tokens):
            raise DomainError("símbolos do vocabulário devem ser únicos")
        if self.tokens[-2:] != (TOKEN_EOS, TOKEN_MASK):
            raise DomainError("eos e máscara devem ocupar os dois últimos ids")
        object.__setattr__(self, "_indice", {s: i for i, s in enumerate(self.tokens)})

    @property
    def size(self):
        return len(self.tokens)

    @property
    def mask_id(self):
        return self.size - 1

    @property
    def eos_id(self):
        return self.size - 2

    @property
    def content_ids(self):
        return range(self.size - 2)

    def tokenize(self, texto):
        try:
            return [self._indice[c] for c in texto]
        except KeyError as e:
            raise DomainError(f"símbolo fora do vocabulário: {e.args[0]!r}") from e

    def detokenize(self, ids, strip_eos=False):
        """Converte ids em texto; especiais aparecem com sua forma de superfície"""
        ids = list(ids)
        if strip_eos:
            ids = strip_eos_suffix(ids, self.eos_id)
        return "".join(self.tokens[i] for i in ids)

    def to_dict(self):
        return {"tokens": list(self.tokens)}

    @classmethod
    def from_dict(cls, dados):
        return cls(tuple(dados["tokens"]))


def strip_eos_suffix(ids, eos_id):
    """Remove a sequência de eos no final"""
    ids = list(ids)
    while ids and ids[-1] == eos_id:
        ids.pop()
    return ids


@dataclass
class Corpus:
    """Conjunto de sequências de ids limpas (sem máscara)"""
    sequences: List[List[int]]
    split: Literal["train", "validation"] = "train"
    vocab: Vocab = field(default=None, repr=False)

    def __post_init__(self):
        if self.vocab is None:
            return
        for seq in self.sequences:
            for i in seq:
                if not 0 <= i < self.vocab.size:
                    raise DomainError(f"id {i} fora do vocabulário de tamanho {self.vocab.size}")
                if i == self.vocab.mask_id:
                    raise DomainError("dados limpos não podem conter o token de máscara")

    def __len__(self):
        return len(self.sequences)

    def num_tokens(self):
        return sum(len(s) for s in self.sequences)


@dataclass(frozen=True)
class GrammarSpec:
    """Linguagem sintética usada como corpus verificável"""
    kind: Literal["mod_arith", "brackets"]
    alphabet_size: int     # módulo da aritmética ou número de tipos de colchetes
    max_len: int

    def __post_init__(self):
        if self.kind not in ("mod_arith", "brackets"):
            raise DomainError(f"gramática não suportada: {self.kind}")
        if self.kind == "brackets" and not 1 <= self.alphabet_size <= 4:
            raise DomainError("brackets suporta de 1 a 4 tipos de colchetes")
        if self.kind == "mod_arith" and self.alphabet_size < 1:
            raise DomainError("módulo deve ser >= 1")
