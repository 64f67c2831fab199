"""
Utilitários para manipulação de arquivos e diretórios: estrutura de pastas de
uma execução, contêiner binário de checkpoint, CSV de métricas e de trace e o
relatório JSON de avaliação.
"""
import csv
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from softmask_mdlm.config.settings import CABECALHO_METRICAS, CHECKPOINT_MAGIC, CHECKPOINT_VERSAO
from softmask_mdlm.core.errors import CheckpointError
from softmask_mdlm.utils.logger import log_info, log_checkpoint

CABECALHO_TRACE = ("step", "revealed", "masked_remaining", "lambda_mean", "lambda_max", "entropy_mean")
_TAMANHO_CHECKSUM = 32
_PREFIXO = struct.Struct("<8sIQ")     # magic, versão, tamanho do cabeçalho JSON


def criar_estrutura_pastas(diretorio):
    """Cria a pasta de saída da execução e a subpasta de checkpoints"""
    os.makedirs(diretorio, exist_ok=True)
    os.makedirs(os.path.join(diretorio, "checkpoints"), exist_ok=True)
    log_info(f"Estrutura de pastas criada em '{diretorio}'")


def derive_seed(seed, indice):
    """Semente independente por amostra derivada de (seed, índice)"""
    return int(np.random.SeedSequence([int(seed), int(indice)]).generate_state(1)[0])


def formatar_numero(valor):
    """Representação independente de locale ('.' decimal, repr exato do float)"""
    if isinstance(valor, bool):
        return str(int(valor))
    if isinstance(valor, float):
        return repr(valor)
    return str(valor)


# --- Checkpoint ---------------------------------------------------------------

@dataclass
class Checkpoint:
    """Conteúdo de um checkpoint carregado"""
    config: dict
    vocab: dict
    step: int
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: Optional[bytes] = None
    checksum: str = ""


def serializar_checkpoint(config, vocab, step, arrays, rng_state=None):
    """Monta os bytes do checkpoint

    Layout: magic | versão (u32 LE) | tamanho do cabeçalho (u64 LE) | cabeçalho JSON |
    arrays float32 LE na ordem do índice | estado do gerador | SHA-256 de tudo o que vem antes.
    """
    indice, blocos, deslocamento = [], [], 0
    for nome in sorted(arrays):
        dados = np.ascontiguousarray(arrays[nome], dtype="<f4").reshape(np.shape(arrays[nome]))
        bruto = dados.tobytes()
        indice.append({"name": nome, "shape": list(dados.shape), "offset": deslocamento, "nbytes": len(bruto)})
        blocos.append(bruto)
        deslocamento += len(bruto)
    rng_state = rng_state or b""
    cabecalho = json.dumps({
        "config": config, "vocab": vocab, "step": int(step),
        "arrays": indice, "rng_nbytes": len(rng_state),
    }, sort_keys=True, separators=(",", ":")).encode("utf-8")
    corpo = _PREFIXO.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSAO, len(cabecalho)) + cabecalho + b"".join(blocos) + rng_state
    return corpo + hashlib.sha256(corpo).digest()


def desserializar_checkpoint(conteudo):
    """Valida magic, versão, checksum e formas; devolve um Checkpoint"""
    if len(conteudo) < _PREFIXO.size + _TAMANHO_CHECKSUM:
        raise CheckpointError("arquivo de checkpoint truncado")
    corpo, resumo = conteudo[:-_TAMANHO_CHECKSUM], conteudo[-_TAMANHO_CHECKSUM:]
    magic, versao, tamanho = _PREFIXO.unpack_from(corpo)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError("magic inválido: não é um checkpoint deste sistema")
    if versao != CHECKPOINT_VERSAO:
        raise CheckpointError(f"versão de checkpoint não suportada: {versao}")
    if hashlib.sha256(corpo).digest() != resumo:
        raise CheckpointError("checksum inválido: checkpoint corrompido")
    inicio = _PREFIXO.size
    try:
        cabecalho = json.loads(corpo[inicio:inicio + tamanho].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cabeçalho ilegível: {e}") from e

    base = inicio + tamanho
    arrays = {}
    for entrada in cabecalho["arrays"]:
        a, b = base + entrada["offset"], base + entrada["offset"] + entrada["nbytes"]
        if b > len(corpo):
            raise CheckpointError(f"array '{entrada['name']}' excede o arquivo")
        dados = np.frombuffer(corpo[a:b], dtype="<f4")
        if dados.size != int(np.prod(entrada["shape"], dtype=np.int64)):
            raise CheckpointError(f"forma inconsistente para '{entrada['name']}'")
        arrays[entrada["name"]] = dados.reshape(entrada["shape"]).astype(np.float32)
    fim_arrays = base + sum(e["nbytes"] for e in cabecalho["arrays"])
    rng = corpo[fim_arrays:fim_arrays + cabecalho["rng_nbytes"]] or None
    return Checkpoint(cabecalho["config"], cabecalho["vocab"], cabecalho["step"], arrays, rng, resumo.hex())


def salvar_checkpoint(caminho, config, vocab, step, arrays, rng_state=None):
    """Grava o checkpoint de forma atômica e devolve o checksum hexadecimal"""
    os.makedirs(os.path.dirname(os.path.abspath(caminho)), exist_ok=True)
    conteudo = serializar_checkpoint(config, vocab, step, arrays, rng_state)
    temporario = f"{caminho}.tmp"
    with open(temporario, "wb") as f:
        f.write(conteudo)
    os.replace(temporario, caminho)
    checksum = conteudo[-_TAMANHO_CHECKSUM:].hex()
    log_checkpoint(f"Checkpoint do passo {step} salvo em '{caminho}' (sha256 {checksum[:12]}…)")
    return checksum


def carregar_checkpoint(caminho):
    try:
        with open(caminho, "rb") as f:
            conteudo = f.read()
    except OSError as e:
        raise CheckpointError(f"não foi possível ler o checkpoint '{caminho}': {e}") from e
    checkpoint = desserializar_checkpoint(conteudo)
    log_checkpoint(f"Checkpoint '{caminho}' carregado (passo {checkpoint.step})")
    return checkpoint


# --- CSV e JSON ---------------------------------------------------------------

class CsvWriter:
    """Escreve registros linha a linha com cabeçalho fixo"""

    def __init__(self, caminho, cabecalho, anexar=False):
        self.cabecalho = tuple(cabecalho)
        existe = anexar and os.path.exists(caminho) and os.path.getsize(caminho) > 0
        self._arquivo = open(caminho, "a" if existe else "w", newline="", encoding="utf-8")
        self._escritor = csv.writer(self._arquivo, lineterminator="\n")
        if not existe:
            self._escritor.writerow(self.cabecalho)

    def escrever(self, registro):
        self._escritor.writerow([formatar_numero(registro[c]) for c in self.cabecalho])
        self._arquivo.flush()

    def fechar(self):
        self._arquivo.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.fechar()


def metrics_writer(caminho, anexar=False):
    return CsvWriter(caminho, CABECALHO_METRICAS, anexar)


def salvar_trace_csv(caminho, registros):
    with CsvWriter(caminho, CABECALHO_TRACE) as escritor:
        for registro in registros:
            escritor.escrever(registro)
    log_info(f"Trace de decodificação salvo em '{caminho}' ({len(registros)} passos)")


def ler_csv(caminho):
    """Lê um CSV de métricas ou trace; números voltam como float"""
    with open(caminho, newline="", encoding="utf-8") as f:
        return [{k: float(v) for k, v in linha.items()} for linha in csv.DictReader(f)]


def salvar_relatorio_json(caminho, relatorio):
    os.makedirs(os.path.dirname(os.path.abspath(caminho)), exist_ok=True)
    with open(caminho, "w", encoding="utf-8") as f:
        json.dump(relatorio, f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    log_info(f"Relatório salvo em '{caminho}'")
