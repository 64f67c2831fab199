"""
Hierarquia de exceções do sistema e os códigos de saída associados.
"""


class SoftMaskError(Exception):
    """Erro base; falhas de execução ou numéricas saem com código 2"""
    exit_code = 2


class ConfigError(SoftMaskError):
    """Configuração ou uso inválido"""
    exit_code = 1


class DomainError(SoftMaskError, ValueError):
    """Pré-condição de uma operação violada"""


class NumericalError(SoftMaskError):
    """Valor não finito ou distribuição degenerada"""

    def __init__(self, mensagem, parametro=None):
        super().__init__(mensagem if parametro is None else f"{mensagem} (parâmetro: {parametro})")
        self.parametro = parametro


class CheckpointError(SoftMaskError):
    """Arquivo de checkpoint corrompido ou incompatível"""
