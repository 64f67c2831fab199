"""
Esquema validado da configuração de execução.
Cada bloco corresponde a um módulo do sistema; chaves desconhecidas são rejeitadas.
"""
import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from softmask_mdlm.config.settings import (
    NUM_CAMADAS, NUM_CABECAS, DIM_MODELO, MAX_LEN, DROPOUT, TIME_BINS,
    TOP_K, ENTROPIA_LIMITE_INFERIOR, RAW_S_INICIAL, TEMPERATURA_INICIAL,
    P_SM_PRETREINO, P_SM_FINETUNE, LIMITES_TEMPO_PRETREINO, LIMITES_TEMPO_FINETUNE,
    ETA_BACKBONE, ETA_SM, TAMANHO_LOTE, PASSOS_TREINO, INTERVALO_CHECKPOINT, INTERVALO_LOG,
    EOS_PAD_MAX, ARIT_MODULO, ARIT_MAX_LEN, NUCLEUS_P, TEMPERATURA_AMOSTRAGEM,
    AMOSTRAS_MC, AMOSTRAS_GRAMATICA, VALIDACAO_T_MIN,
)
from softmask_mdlm.core.errors import ConfigError


class _Estrito(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class BackboneConfig(_Estrito):
    """Arquitetura do denoiser bidirecional"""
    layers: int = Field(NUM_CAMADAS, ge=1)
    heads: int = Field(NUM_CABECAS, ge=1)
    model_dim: int = Field(DIM_MODELO, ge=1)
    vocab_size: Optional[int] = Field(None, ge=3)  # Preenchido a partir do corpus
    max_len: int = Field(MAX_LEN, ge=1)
    time_conditioned: bool = False
    time_bins: int = Field(TIME_BINS, ge=2)
    dropout: float = Field(DROPOUT, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _dim_divisivel(self):
        if self.model_dim % self.heads != 0:
            raise ValueError(f"model_dim ({self.model_dim}) deve ser divisível por heads ({self.heads})")
        return self


TDMode = Literal[
    "none", "stepwise_sm_to_binary", "stepwise_binary_to_sm",
    "linear_sm_to_binary", "linear_binary_to_sm",
]


class TDConfig(_Estrito):
    """Multiplicador de realimentação dependente do passo"""
    mode: TDMode = "none"
    threshold: float = Field(0.5, ge=0.0, le=1.0)  # Usado apenas nos modos stepwise

    @classmethod
    def parse(cls, texto):
        """Converte 'modo:limiar' (ou apenas 'modo') vindo da linha de comando"""
        modo, _, limiar = texto.partition(":")
        try:
            return cls(mode=modo, threshold=float(limiar) if limiar else 0.5)
        except (ValidationError, ValueError) as e:
            raise ConfigError(f"--td inválido '{texto}': {e}") from e


class SoftMaskConfig(_Estrito):
    """Parâmetros da função de soft-masking"""
    k: Union[int, Literal["full"]] = TOP_K
    entropy_lower_bound: float = Field(ENTROPIA_LIMITE_INFERIOR, lt=0.0)
    raw_s_init: float = RAW_S_INICIAL
    temperature_init: float = Field(TEMPERATURA_INICIAL, gt=0.0)

    @model_validator(mode="after")
    def _k_valido(self):
        if self.k != "full" and self.k < 1:
            raise ValueError("k deve ser >= 1 ou 'full'")
        return self


class TrainConfig(_Estrito):
    """Treino em duas passadas"""
    regime: Literal["pretraining", "finetuning"] = "pretraining"
    b_l: Optional[float] = Field(None, ge=0.0, le=1.0)
    b_h: Optional[float] = Field(None, ge=0.0, le=1.0)
    p_sm: Optional[float] = Field(None, ge=0.0, le=1.0)
    sm_enabled: bool = True
    lr_backbone: float = Field(ETA_BACKBONE, gt=0.0)
    lr_sm: float = Field(ETA_SM, gt=0.0)
    weight_decay: float = Field(0.0, ge=0.0)
    warmup_steps: int = Field(0, ge=0)
    batch_size: int = Field(TAMANHO_LOTE, ge=1)
    total_steps: int = Field(PASSOS_TREINO, ge=1)
    seed: int = 0
    grad_clip_norm: Optional[float] = Field(None, gt=0.0)
    time_sampling: Literal["per_sequence", "per_batch"] = "per_sequence"
    checkpoint_every: int = Field(INTERVALO_CHECKPOINT, ge=1)
    log_every: int = Field(INTERVALO_LOG, ge=1)
    init_checkpoint: Optional[str] = None

    @model_validator(mode="after")
    def _preencher_regime(self):
        # Padrões dependem do regime: pré-treino contínuo ou finetuning
        b_l, b_h = LIMITES_TEMPO_PRETREINO if self.regime == "pretraining" else LIMITES_TEMPO_FINETUNE
        p_sm = P_SM_PRETREINO if self.regime == "pretraining" else P_SM_FINETUNE
        if self.b_l is None:
            object.__setattr__(self, "b_l", b_l)
        if self.b_h is None:
            object.__setattr__(self, "b_h", b_h)
        if self.p_sm is None:
            object.__setattr__(self, "p_sm", p_sm)
        if not self.b_l < self.b_h:
            raise ValueError(f"limites de tempo exigem b_l < b_h (recebido {self.b_l}, {self.b_h})")
        return self


class DecodeConfig(_Estrito):
    """Processo reverso iterativo"""
    length: int = Field(64, ge=1)
    steps: Optional[int] = Field(None, ge=1)
    nfe_budget: Optional[float] = Field(None, gt=0.0, le=1.0)
    strategy: Literal["schedule_random", "entropy_count"] = "entropy_count"
    sampler: Literal["argmax", "nucleus"] = "argmax"
    temperature: float = Field(TEMPERATURA_AMOSTRAGEM, gt=0.0)
    top_p: float = Field(NUCLEUS_P, gt=0.0, le=1.0)
    sm_enabled: bool = True
    td: TDConfig = TDConfig()
    seed: int = 0

    @model_validator(mode="after")
    def _passos_consistentes(self):
        if self.steps is not None and self.nfe_budget is not None:
            raise ValueError("steps e nfe_budget são mutuamente exclusivos")
        if self.strategy == "entropy_count" and self.total_steps() > self.length:
            raise ValueError("entropy_count exige steps <= length")
        return self

    def total_steps(self):
        """Número de passos T resolvido a partir de steps ou do orçamento de NFE"""
        from softmask_mdlm.services.decoding import steps_from_budget
        if self.steps is not None:
            return self.steps
        return steps_from_budget(self.nfe_budget if self.nfe_budget is not None else 1.0, self.length)


class CorpusConfig(_Estrito):
    """Origem e preparação dos dados"""
    source: Literal["grammar", "text"] = "grammar"
    grammar_kind: Literal["mod_arith", "brackets"] = "mod_arith"
    alphabet_size: int = Field(ARIT_MODULO, ge=1)
    grammar_max_len: int = Field(ARIT_MAX_LEN, ge=2)
    n_train: int = Field(20000, ge=1)
    n_valid: int = Field(500, ge=1)
    train_path: Optional[str] = None
    valid_path: Optional[str] = None
    mode: Literal["document", "packed", "conditional"] = "document"
    seq_len: int = Field(64, ge=2)
    eos_pad_max: int = Field(EOS_PAD_MAX, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _origem_consistente(self):
        if self.source == "text" and not self.train_path:
            raise ValueError("source 'text' exige train_path")
        if self.source == "text" and self.mode == "conditional":
            raise ValueError("modo 'conditional' só é suportado para gramáticas sintéticas")
        return self


class EvalConfig(_Estrito):
    """Avaliação: NELBO de validação e qualidade das amostras"""
    mc_samples: int = Field(AMOSTRAS_MC, ge=1)
    n_samples: int = Field(AMOSTRAS_GRAMATICA, ge=1)
    t_min: float = Field(VALIDACAO_T_MIN, gt=0.0, lt=1.0)  # Limite inferior de t na NELBO de validação
    sm_on: bool = True
    prompted: bool = False
    seed: int = 0


class RunConfig(_Estrito):
    """União de todas as configurações de uma execução"""
    backbone: BackboneConfig = BackboneConfig()
    softmask: SoftMaskConfig = SoftMaskConfig()
    training: TrainConfig = TrainConfig()
    decode: DecodeConfig = DecodeConfig()
    corpus: CorpusConfig = CorpusConfig()
    eval: EvalConfig = EvalConfig()
    output_dir: str = "execucoes/padrao"

    @model_validator(mode="after")
    def _comprimentos(self):
        if self.corpus.seq_len > self.backbone.max_len:
            raise ValueError(f"corpus.seq_len ({self.corpus.seq_len}) excede backbone.max_len ({self.backbone.max_len})")
        if self.decode.length > self.backbone.max_len:
            raise ValueError(f"decode.length ({self.decode.length}) excede backbone.max_len ({self.backbone.max_len})")
        return self

    @classmethod
    def from_file(cls, caminho):
        """Carrega e valida um arquivo JSON de configuração"""
        caminho = Path(caminho)
        try:
            texto = caminho.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"não foi possível ler a configuração '{caminho}': {e}") from e
        return cls.model_validate_json(texto)

    def canonical_json(self):
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def fingerprint(self):
        """SHA-256 do JSON canônico"""
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()
