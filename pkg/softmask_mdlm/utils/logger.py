"""
Módulo de logging do sistema de difusão mascarada.
Fornece funções para registrar diferentes tipos de eventos.
As mensagens vão para stderr via tqdm.write para não quebrar as barras de progresso
e manter o stdout livre para os resultados dos comandos.
"""
import sys
from datetime import datetime

from tqdm import tqdm

from softmask_mdlm.config.settings import MODO_DEBUG


def _emitir(tag, mensagem):
    timestamp = datetime.now().strftime("%H:%M:%S")
    tqdm.write(f"[{tag}] [{timestamp}] {mensagem}", file=sys.stderr)


def log_info(mensagem):
    """Exibe log de informação com timestamp"""
    _emitir("INFO", mensagem)


def log_treino(mensagem):
    """Exibe log de progresso do treinamento com timestamp"""
    _emitir("TREINO", mensagem)


def log_decodificacao(mensagem):
    """Exibe log da decodificação reversa com timestamp"""
    _emitir("DECODIFICACAO", mensagem)


def log_avaliacao(mensagem):
    """Exibe log de avaliação com timestamp"""
    _emitir("AVALIACAO", mensagem)


def log_checkpoint(mensagem):
    """Exibe log específico para checkpoints com timestamp"""
    _emitir("CHECKPOINT", mensagem)


def log_debug(mensagem, modo_debug=None):
    """Exibe log de depuração apenas se o modo debug estiver ativado"""
    if MODO_DEBUG if modo_debug is None else modo_debug:
        _emitir("DEBUG", mensagem)


def log_error(mensagem):
    """Exibe log de erro com timestamp"""
    _emitir("ERRO", mensagem)
