"""
Taxonomia de erros do Multiscale Quantizer
"""


class MSQError(Exception):
    """Erro base de todas as falhas do projeto"""


class DimensionError(MSQError, ValueError):
    """Extensões incompatíveis entre operandos"""


class GeometryError(MSQError, ValueError):
    """Geometria inválida (extensão de saída não inteira, canais ímpares...)"""


class ContractError(MSQError, RuntimeError):
    """Pré-condição de uma operação violada"""


class DomainError(MSQError, ValueError):
    """Parâmetro fora do domínio (bit-width, clip <= 0...)"""


class CandidateError(MSQError, KeyError):
    """Bit-width fora do conjunto de candidatos"""

    def __init__(self, bits, candidates=None):
        self.bits = bits
        self.candidates = list(candidates) if candidates is not None else None
        message = f"bit-width {bits} não pertence a K={self.candidates}"
        super().__init__(message)

    def __str__(self):
        return self.args[0]


class FormatError(MSQError, ValueError):
    """Arquivo com magic, versão ou cabeçalho inválido"""


class IntegrityError(MSQError, ValueError):
    """Arquivo truncado ou inconsistente com a tabela de tensores"""


class ConfigError(MSQError, ValueError):
    """Configuração inválida ou chave desconhecida"""


class DataError(MSQError, OSError):
    """Dataset ausente ou ilegível"""


class NumericalError(MSQError, ArithmeticError):
    """NaN/Inf detectado em loss ou saída de operação"""


class NearKinkError(MSQError, ValueError):
    """Ponto próximo demais de uma descontinuidade do quantizador"""


class BenchmarkError(MSQError, RuntimeError):
    """Kernel não passou na verificação de exatidão"""


class BundleNotFoundError(FormatError, FileNotFoundError):
    """Arquivo .msq inexistente"""
