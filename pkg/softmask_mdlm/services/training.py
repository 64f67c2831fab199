"""
Serviço de treinamento em duas passadas: amostra t no intervalo [b_l, b_h],
corrompe o lote, decide se o lote usa soft-masking e atualiza backbone e
parâmetros do SM com taxas de aprendizado distintas.
"""
import math
import time

import numpy as np
import torch
from torch.optim import AdamW
from torch.optim.lr_scheduler import LambdaLR
from tqdm import tqdm

from softmask_mdlm.config.settings import BETAS_ADAM, EPS_ADAM
from softmask_mdlm.core.errors import CheckpointError, DomainError, NumericalError
from softmask_mdlm.core.schedule import corrupt
from softmask_mdlm.models.backbone import collect_gradients, loss as masked_loss
from softmask_mdlm.models.soft_input import SoftInput
from softmask_mdlm.utils.logger import log_treino, log_debug

GRUPO_BACKBONE = "backbone"
GRUPO_SM = "softmask"


def sample_time(b_l, b_h, generator, size=()):
    """t ~ Uniforme(b_l, b_h]; o extremo inferior é excluído para que 1/t seja finito"""
    if not 0.0 <= b_l < b_h <= 1.0:
        raise DomainError(f"limites de tempo inválidos: ({b_l}, {b_h})")
    u = torch.rand(size, generator=generator, dtype=torch.float64)
    return b_h - (b_h - b_l) * u


def model_dtype(model):
    return next(model.parameters()).dtype


def two_pass_probs(model, softmask, xt, t, use_sm, valid=None, p_tilde=None):
    """Probabilidades da passada com gradiente e as da primeira passada (se houver)

    Args:
        model: Denoiser
        softmask: módulo SoftMask (ignorado quando use_sm é falso)
        xt: lote corrompido (B, L)
        t: tempo por sequência (B,)
        use_sm: executa o caminho de duas passadas
        valid: máscara de preenchimento opcional (B, L)
        p_tilde: probabilidades da primeira passada já calculadas

    Returns:
        Tupla (probs, p_tilde)
    """
    mask_id = model.mask_id
    t_modelo = t if model.time_emb is not None else None
    binario = SoftInput.from_tokens(xt, mask_id, dtype=model_dtype(model))
    if not use_sm:
        return model(binario, t_modelo, valid), None
    if p_tilde is None:
        with torch.no_grad():
            p_tilde = model(binario, t_modelo, valid)
    entrada = softmask(xt, p_tilde.detach(), mask_id)
    return model(entrada, t_modelo, valid), p_tilde


def two_pass_loss(model, softmask, x0, xt, mask, t, use_sm, valid=None, p_tilde=None):
    """Perda de duas passadas para um lote já corrompido; retorna (perda, p_tilde)"""
    probs, p_tilde = two_pass_probs(model, softmask, xt, t, use_sm, valid, p_tilde)
    return masked_loss(probs, x0, mask, t), p_tilde


def build_optimizer(model, softmask, config):
    """AdamW com dois grupos disjuntos: θ com η_bb e ω com η_sm (sem decaimento de peso)"""
    grupos = [
        {"params": list(model.parameters()), "lr": config.lr_backbone,
         "weight_decay": config.weight_decay, "name": GRUPO_BACKBONE},
        {"params": softmask.trainable_parameters(), "lr": config.lr_sm,
         "weight_decay": 0.0, "name": GRUPO_SM},
    ]
    return AdamW(grupos, betas=BETAS_ADAM, eps=EPS_ADAM)


def warmup_factor(warmup_steps):
    """Fator multiplicativo de LR: rampa linear por warmup_steps atualizações, depois constante"""
    if warmup_steps <= 0:
        return lambda passo: 1.0
    return lambda passo: min(1.0, (passo + 1) / warmup_steps)


def optimizer_update(optimizer, grad_clip_norm=None, scheduler=None):
    """Recorte opcional pela norma global seguido do passo Adam; retorna a norma antes do recorte"""
    parametros = [p for g in optimizer.param_groups for p in g["params"] if p.grad is not None]
    norma = None
    if grad_clip_norm is not None and parametros:
        norma = float(torch.nn.utils.clip_grad_norm_(parametros, grad_clip_norm))
    optimizer.step()
    if scheduler is not None:
        scheduler.step()
    return norma


class Trainer:
    """Classe que conduz o treino em duas passadas com estado reprodutível"""

    def __init__(self, model, softmask, config):
        """
        Inicializa o treinador

        Args:
            model: Denoiser a treinar
            softmask: SoftMask com os parâmetros ω
            config: TrainConfig
        """
        self.model = model
        self.softmask = softmask
        self.config = config
        self.mask_id = model.mask_id
        self.generator = torch.Generator().manual_seed(config.seed)
        self.optimizer = build_optimizer(model, softmask, config)
        self.step = 0
        self.scheduler = self._criar_scheduler()

    def _criar_scheduler(self):
        for grupo in self.optimizer.param_groups:
            grupo.setdefault("initial_lr", grupo["lr"])
        return LambdaLR(self.optimizer, warmup_factor(self.config.warmup_steps), last_epoch=self.step - 1)

    def sample_batch(self, janelas):
        indices = torch.randint(0, len(janelas), (self.config.batch_size,), generator=self.generator)
        return janelas.select(indices)

    def _tempos(self, batch):
        cfg = self.config
        if cfg.time_sampling == "per_batch":
            return sample_time(cfg.b_l, cfg.b_h, self.generator).expand(batch)
        return sample_time(cfg.b_l, cfg.b_h, self.generator, (batch,))

    def train_step(self, lote):
        """Uma iteração de treino sobre um lote de janelas

        Ordem de consumo do gerador: t, corrupção e a moeda do SM (sempre sorteada).

        Returns:
            dict com step, loss, ω efetivos (antes da atualização), used_sm e wall_ms
        """
        inicio = time.perf_counter()
        cfg = self.config
        self.model.train()
        x0 = lote.tokens
        t = self._tempos(x0.shape[0])
        xt, mascara = corrupt(x0, t, self.generator, self.mask_id, lote.maskable)
        moeda = float(torch.rand((), generator=self.generator, dtype=torch.float64))
        use_sm = cfg.sm_enabled and moeda < cfg.p_sm
        omega_s, omega_a, omega_b = (float(v) for v in self.softmask.effective())

        self.optimizer.zero_grad(set_to_none=True)
        perda, _ = two_pass_loss(self.model, self.softmask, x0, xt, mascara, t, use_sm, lote.valid)
        valor = float(perda)
        if not math.isfinite(valor):
            raise NumericalError(f"perda não finita no passo {self.step + 1}: {valor}")

        if bool(mascara.any()):
            perda.backward()
            collect_gradients({GRUPO_BACKBONE: self.model, GRUPO_SM: self.softmask})
            optimizer_update(self.optimizer, cfg.grad_clip_norm, self.scheduler)
        else:
            # Sem posições mascaradas não há sinal; pesos e momentos ficam intactos
            log_debug(f"lote sem máscaras no passo {self.step + 1}")
            self.scheduler.step()
        self.step += 1
        return {
            "step": self.step, "loss": valor,
            "omega_s": omega_s, "omega_a": omega_a, "omega_b": omega_b,
            "wall_ms": (time.perf_counter() - inicio) * 1000.0, "used_sm": use_sm,
        }

    def fit(self, janelas, ao_registrar=None, ao_salvar=None):
        """
        Treina até config.total_steps a partir do passo atual

        Args:
            janelas: Windows de treino
            ao_registrar: callback chamado com cada registro de métricas
            ao_salvar: callback chamado com o passo a cada checkpoint_every passos

        Returns:
            Lista de registros de métricas produzidos nesta chamada
        """
        cfg = self.config
        registros = []
        barra = tqdm(total=cfg.total_steps, initial=self.step, desc="Treino", unit="passo")
        try:
            while self.step < cfg.total_steps:
                registro = self.train_step(self.sample_batch(janelas))
                registros.append(registro)
                if ao_registrar is not None:
                    ao_registrar(registro)
                barra.update(1)
                barra.set_postfix(loss=f"{registro['loss']:.4f}", omega_s=f"{registro['omega_s']:.4f}")
                if self.step % cfg.log_every == 0:
                    media = np.mean([r["loss"] for r in registros[-cfg.log_every:]])
                    mensagem = (f"passo {self.step}/{cfg.total_steps} perda média {media:.4f} "
                                f"ω_s={registro['omega_s']:.4f} ω_a={registro['omega_a']:.4f} ω_b={registro['omega_b']:.4f}")
                    if self.softmask.full_softmax:
                        mensagem += f" τ={float(self.softmask.temperature()):.4f}"
                    log_treino(mensagem)
                if ao_salvar is not None and self.step % cfg.checkpoint_every == 0:
                    ao_salvar(self.step)
        finally:
            barra.close()
        return registros

    # --- Estado para checkpoints ---------------------------------------------

    def _nomes(self):
        nomes = {}
        for prefixo, modulo in ((GRUPO_BACKBONE, self.model), (GRUPO_SM, self.softmask)):
            for nome, param in modulo.named_parameters():
                nomes[param] = f"{prefixo}/{nome}"
        return nomes

    def export_state(self):
        """Parâmetros e momentos do otimizador como arrays nomeados + estado do gerador"""
        arrays = export_parameters(self.model, self.softmask)
        for param, nome in self._nomes().items():
            estado = self.optimizer.state.get(param)
            if not estado:
                continue
            arrays[f"optim/{nome}/exp_avg"] = estado["exp_avg"].detach().cpu().numpy()
            arrays[f"optim/{nome}/exp_avg_sq"] = estado["exp_avg_sq"].detach().cpu().numpy()
            arrays[f"optim/{nome}/step"] = np.asarray([float(estado["step"])])
        return arrays, bytes(self.generator.get_state().numpy().tobytes())

    def restore_state(self, arrays, rng_state, step):
        """Restaura parâmetros, momentos, passo, agendamento de LR e gerador"""
        import_parameters(self.model, self.softmask, arrays)
        for param, nome in self._nomes().items():
            chave = f"optim/{nome}"
            if f"{chave}/exp_avg" not in arrays:
                continue
            self.optimizer.state[param] = {
                "step": torch.tensor(float(arrays[f"{chave}/step"][0])),
                "exp_avg": torch.from_numpy(np.array(arrays[f"{chave}/exp_avg"])).to(param.dtype),
                "exp_avg_sq": torch.from_numpy(np.array(arrays[f"{chave}/exp_avg_sq"])).to(param.dtype),
            }
        if rng_state is not None:
            self.generator.set_state(torch.from_numpy(np.frombuffer(rng_state, dtype=np.uint8).copy()))
        self.step = int(step)
        self.scheduler = self._criar_scheduler()


def export_parameters(model, softmask):
    arrays = {}
    for prefixo, modulo in ((GRUPO_BACKBONE, model), (GRUPO_SM, softmask)):
        for nome, param in modulo.named_parameters():
            arrays[f"{prefixo}/{nome}"] = param.detach().cpu().numpy()
    return arrays


def import_parameters(model, softmask, arrays, incluir_sm=True):
    """Copia arrays nomeados para os parâmetros; formas divergentes são erro"""
    modulos = [(GRUPO_BACKBONE, model)] + ([(GRUPO_SM, softmask)] if incluir_sm else [])
    with torch.no_grad():
        for prefixo, modulo in modulos:
            for nome, param in modulo.named_parameters():
                chave = f"{prefixo}/{nome}"
                if chave not in arrays:
                    raise CheckpointError(f"checkpoint sem o parâmetro '{chave}'")
                valor = torch.from_numpy(np.array(arrays[chave])).to(param.dtype)
                if valor.shape != param.shape:
                    raise CheckpointError(f"forma de '{chave}' diverge: {tuple(valor.shape)} != {tuple(param.shape)}")
                param.copy_(valor)
