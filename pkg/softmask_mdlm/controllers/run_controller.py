"""
Controlador principal das execuções: treino, geração, avaliação e inspeção
de checkpoints. Cada comando é um trabalho único; o paralelismo interno fica
a cargo dos serviços.
"""
import json
import os

import torch

from softmask_mdlm.config.schema import BackboneConfig, DecodeConfig, EvalConfig, RunConfig, TDConfig
from softmask_mdlm.core.errors import CheckpointError, ConfigError
from softmask_mdlm.core.softmask import effective_params, init_params, inverse_params
from softmask_mdlm.models.backbone import Denoiser, analytic_param_count
from softmask_mdlm.models.vocab import Vocab
from softmask_mdlm.services.corpus import CorpusBuilder
from softmask_mdlm.services.decoding import Decoder
from softmask_mdlm.services.evaluation import build_report
from softmask_mdlm.services.training import Trainer, export_parameters, import_parameters
from softmask_mdlm.utils.file_utils import (
    carregar_checkpoint, criar_estrutura_pastas, metrics_writer, salvar_checkpoint,
    salvar_relatorio_json, salvar_trace_csv,
)
from softmask_mdlm.utils.logger import log_info, log_treino


def construir_modelo(config, vocab):
    """Denoiser e SoftMask para a configuração e o vocabulário dados (pesos iniciais semeados)"""
    backbone = BackboneConfig(**{**config.backbone.model_dump(), "vocab_size": vocab.size})
    torch.manual_seed(config.training.seed)
    model = Denoiser(backbone, vocab.mask_id)
    sm = config.softmask
    softmask = init_params(sm.entropy_lower_bound, vocab.size, sm.k, sm.raw_s_init, sm.temperature_init)
    return model, softmask


class RunController:
    """Controlador dos subcomandos train, generate, eval e inspect"""

    def __init__(self, config=None):
        """
        Inicializa o controlador

        Args:
            config: RunConfig validada (obrigatória apenas para o treino)
        """
        self.config = config

    # --- Persistência -----------------------------------------------------

    def _carregar(self, caminho):
        """Lê um checkpoint e reconstrói configuração, vocabulário, modelo e SM"""
        checkpoint = carregar_checkpoint(caminho)
        try:
            config = RunConfig.model_validate(checkpoint.config)
            vocab = Vocab.from_dict(checkpoint.vocab)
        except ValueError as e:
            raise CheckpointError(f"configuração do checkpoint inválida: {e}") from e
        model, softmask = construir_modelo(config, vocab)
        import_parameters(model, softmask, checkpoint.arrays)
        return checkpoint, config, vocab, model, softmask

    def _salvar(self, caminho, config, vocab, trainer):
        arrays, rng = trainer.export_state()
        dados = config.model_dump(mode="json")
        dados["backbone"]["vocab_size"] = vocab.size
        return salvar_checkpoint(caminho, dados, vocab.to_dict(), trainer.step, arrays, rng)

    # --- Comandos ---------------------------------------------------------

    def cmd_train(self, resume=None):
        """
        Executa o treino e grava checkpoints periódicos e o CSV de métricas

        Args:
            resume: caminho de um checkpoint para continuar a execução

        Returns:
            Caminho do checkpoint final
        """
        if self.config is None:
            raise ConfigError("o treino exige um arquivo de configuração")
        config = self.config
        saida = config.output_dir
        criar_estrutura_pastas(saida)
        with open(os.path.join(saida, "config.json"), "w", encoding="utf-8") as f:
            json.dump(config.model_dump(mode="json"), f, indent=2, sort_keys=True)

        bundle = CorpusBuilder(config.corpus).construir()
        vocab = bundle.vocab
        model, softmask = construir_modelo(config, vocab)
        log_info(f"Modelo com {sum(p.numel() for p in model.parameters())} parâmetros, |V|={vocab.size}")
        trainer = Trainer(model, softmask, config.training)

        if resume:
            checkpoint = carregar_checkpoint(resume)
            self._checar_vocab(checkpoint, vocab)
            trainer.restore_state(checkpoint.arrays, checkpoint.rng_state, checkpoint.step)
            log_treino(f"Retomando do passo {checkpoint.step}")
        elif config.training.init_checkpoint:
            checkpoint = carregar_checkpoint(config.training.init_checkpoint)
            self._checar_vocab(checkpoint, vocab)
            # Apenas θ vem do checkpoint; ω parte da inicialização
            import_parameters(model, softmask, checkpoint.arrays, incluir_sm=False)
            log_treino(f"Backbone inicializado de '{config.training.init_checkpoint}' (passo {checkpoint.step})")

        pasta_ckpt = os.path.join(saida, "checkpoints")
        with metrics_writer(os.path.join(saida, "metrics.csv"), anexar=bool(resume)) as metricas:
            trainer.fit(
                bundle.train_windows,
                ao_registrar=metricas.escrever,
                ao_salvar=lambda passo: self._salvar(
                    os.path.join(pasta_ckpt, f"step_{passo:06d}.ckpt"), config, vocab, trainer),
            )
        final = os.path.join(saida, "model.ckpt")
        self._salvar(final, config, vocab, trainer)
        log_treino(f"Treino concluído no passo {trainer.step}")
        return final

    @staticmethod
    def _checar_vocab(checkpoint, vocab):
        if Vocab.from_dict(checkpoint.vocab) != vocab:
            raise CheckpointError("o vocabulário do checkpoint difere do corpus atual")

    def cmd_generate(self, checkpoint_path, prompt=None, overrides=None, trace_path=None):
        """
        Gera texto a partir de um checkpoint

        Args:
            checkpoint_path: caminho do checkpoint
            prompt: texto de contexto opcional
            overrides: dict com campos de DecodeConfig vindos da linha de comando
            trace_path: caminho opcional do CSV com um registro por passo

        Returns:
            Tupla (texto, DecodeResult)
        """
        _, config, vocab, model, softmask = self._carregar(checkpoint_path)
        decode_config = resolver_decode_config(config.decode, overrides or {})
        texto, resultado = Decoder(model, softmask, vocab, decode_config).gerar(prompt)
        if trace_path:
            salvar_trace_csv(trace_path, resultado.trace)
        return texto, resultado

    def cmd_eval(self, checkpoint_path, overrides=None, output_path=None):
        """
        Avalia um checkpoint e grava o relatório JSON

        Args:
            checkpoint_path: caminho do checkpoint
            overrides: dict com campos de EvalConfig vindos da linha de comando
            output_path: destino do relatório (padrão: output_dir/eval_report.json)

        Returns:
            dict do EvalReport
        """
        checkpoint, config, vocab, model, softmask = self._carregar(checkpoint_path)
        try:
            opcoes = {k: v for k, v in (overrides or {}).items() if v is not None}
            eval_config = EvalConfig(**{**config.eval.model_dump(), **opcoes})
        except ValueError as e:
            raise ConfigError(f"opções de avaliação inválidas: {e}") from e
        bundle = CorpusBuilder(config.corpus).construir()
        if bundle.vocab != vocab:
            raise CheckpointError("o vocabulário do checkpoint difere do corpus de validação")
        relatorio = build_report(model, softmask, bundle, config.decode, eval_config,
                                 config.fingerprint(), checkpoint.checksum).to_dict()
        salvar_relatorio_json(output_path or os.path.join(config.output_dir, "eval_report.json"), relatorio)
        return relatorio

    def cmd_inspect(self, checkpoint_path):
        """Resumo do checkpoint: configuração, contagens de parâmetros e parâmetros do SM"""
        checkpoint, config, vocab, model, softmask = self._carregar(checkpoint_path)
        resumo_sm = softmask.summary()
        bruto = torch.tensor([resumo_sm["raw_s"], resumo_sm["raw_a"], resumo_sm["raw_b"]], dtype=torch.float64)
        efetivo = effective_params(*bruto)
        recuperado = torch.stack(list(inverse_params(*efetivo)))
        backbone = model.config
        return {
            "step": checkpoint.step,
            "checksum": checkpoint.checksum,
            "config": config.model_dump(mode="json"),
            "vocab": list(vocab.tokens),
            "param_count": sum(p.numel() for p in model.parameters()),
            "param_count_analytic": analytic_param_count(backbone),
            "softmask": resumo_sm,
            "roundtrip_max_error": float((recuperado - bruto).abs().max()),
            "arrays": len(export_parameters(model, softmask)),
        }


def resolver_decode_config(base, overrides):
    """Aplica as opções de linha de comando sobre a DecodeConfig do checkpoint"""
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "steps" in overrides and "nfe_budget" in overrides:
        raise ConfigError("--steps e --nfe-budget são mutuamente exclusivos")
    dados = base.model_dump()
    if "steps" in overrides:
        dados["nfe_budget"] = None
    if "nfe_budget" in overrides:
        dados["steps"] = None
    if isinstance(overrides.get("td"), str):
        overrides["td"] = TDConfig.parse(overrides["td"]).model_dump()
    try:
        return DecodeConfig(**{**dados, **overrides})
    except ValueError as e:
        raise ConfigError(f"opções de decodificação inválidas: {e}") from e


def formatar_inspecao(resumo):
    """Texto legível do resumo de inspeção"""
    sm = resumo["softmask"]
    linhas = [
        f"Passo: {resumo['step']}",
        f"SHA-256: {resumo['checksum']}",
        f"Vocabulário ({len(resumo['vocab'])}): {' '.join(resumo['vocab'])}",
        f"Parâmetros: {resumo['param_count']} (fórmula fechada: {resumo['param_count_analytic']})",
        f"SM brutos: raw_s={sm['raw_s']:.6f} raw_a={sm['raw_a']:.6f} raw_b={sm['raw_b']:.6f}",
        f"SM efetivos: ω_s={sm['omega_s']:.6f} ω_a={sm['omega_a']:.6f} ω_b={sm['omega_b']:.6f} (k={sm['k']})",
    ]
    if "temperature" in sm:
        linhas.append(f"Temperatura da superposição: {sm['temperature']:.6f}")
    linhas.append(f"Erro de ida e volta bruto↔efetivo: {resumo['roundtrip_max_error']:.3e}")
    linhas.append("Configuração:")
    linhas.append(json.dumps(resumo["config"], indent=2, sort_keys=True))
    return "\n".join(linhas)
