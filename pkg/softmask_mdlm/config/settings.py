"""
Configurações padrão do sistema de difusão mascarada com soft-masking.
Contém todas as constantes e parâmetros utilizados pelo sistema.
"""
import os

# Tokens especiais (sempre os dois maiores ids do vocabulário, máscara por último)
TOKEN_EOS = "<eos>"
TOKEN_MASK = "<mask>"

# Configuração de mesa do backbone (treina em minutos numa CPU)
NUM_CAMADAS = 4
NUM_CABECAS = 4
DIM_MODELO = 128
MAX_LEN = 128
DROPOUT = 0.0                 # Passadas com SM e sem SM ficam idênticas
TIME_BINS = 128               # Grade discreta para o embedding de tempo

# Estabilidade numérica
EPSILON_LOG = 1e-12           # Piso dentro do log da perda
TOLERANCIA_SIMPLEX_F64 = 1e-6
TOLERANCIA_SIMPLEX_F32 = 1e-5

# Soft-masking
TOP_K = 3
ENTROPIA_LIMITE_INFERIOR = -1.5   # 95% dos valores de -H(p) acima deste limite
RAW_S_INICIAL = -4.0              # sigmoid(-4) ~ 0.018, "próximo de zero"
TEMPERATURA_INICIAL = 1.0         # Modo softmax completo (k = |V|)

# Treinamento
P_SM_PRETREINO = 0.8
P_SM_FINETUNE = 0.5
LIMITES_TEMPO_PRETREINO = (0.0, 1.0)
LIMITES_TEMPO_FINETUNE = (0.2, 0.8)
ETA_BACKBONE = 3e-4
ETA_SM = 1e-2
BETAS_ADAM = (0.9, 0.999)
EPS_ADAM = 1e-8
TAMANHO_LOTE = 32
PASSOS_TREINO = 1000
INTERVALO_CHECKPOINT = 500
INTERVALO_LOG = 50

# Corpus
EOS_PAD_MAX = 8                   # Para comprimentos longos, valores até 50
ARIT_MODULO = 10
ARIT_MAX_LEN = 16

# Decodificação
NUCLEUS_P = 0.9
TEMPERATURA_AMOSTRAGEM = 1.0

# Avaliação
VALIDACAO_T_MIN = 1e-3            # t ~ U(t_min, 1) mantém a variância finita
AMOSTRAS_MC = 4
AMOSTRAS_GRAMATICA = 64

# Persistência
CHECKPOINT_MAGIC = b"SMDLMCKP"
CHECKPOINT_VERSAO = 1
CABECALHO_METRICAS = ("step", "loss", "omega_s", "omega_a", "omega_b", "wall_ms")

# Configurações de debug e paralelismo
MODO_DEBUG = os.environ.get("SOFTMASK_DEBUG", "0") == "1"
NUM_THREADS = int(os.environ.get("SOFTMASK_THREADS", "0") or 0)  # 0 = automático
