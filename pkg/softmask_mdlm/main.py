"""
Módulo principal do sistema de difusão mascarada com soft-masking.
Subcomandos: train, generate, eval e inspect.
Códigos de saída: 0 sucesso, 1 configuração/uso inválido, 2 erro de execução.
"""
import argparse
import json
import sys

import torch
from pydantic import ValidationError

from softmask_mdlm.config.schema import RunConfig
from softmask_mdlm.config.settings import NUM_THREADS
from softmask_mdlm.controllers.run_controller import RunController, formatar_inspecao
from softmask_mdlm.core.errors import ConfigError, SoftMaskError
from softmask_mdlm.utils.logger import log_info, log_error


class _Parser(argparse.ArgumentParser):
    """Erros de uso viram ConfigError (código 1) em vez do código 2 do argparse"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _on_off(valor):
    if valor not in ("on", "off"):
        raise argparse.ArgumentTypeError("use 'on' ou 'off'")
    return valor == "on"


def criar_parser():
    parser = _Parser(prog="softmask_mdlm", description="Difusão mascarada com realimentação soft-masking")
    sub = parser.add_subparsers(dest="comando", required=True, parser_class=_Parser)

    treino = sub.add_parser("train", help="treina um modelo a partir de um arquivo de configuração")
    treino.add_argument("--config", required=True, help="arquivo JSON com a RunConfig")
    treino.add_argument("--resume", help="checkpoint para continuar o treino")

    gerar = sub.add_parser("generate", help="gera texto a partir de um checkpoint")
    gerar.add_argument("--checkpoint", required=True)
    gerar.add_argument("--prompt", help="contexto fixado no início da sequência")
    gerar.add_argument("--length", type=int)
    gerar.add_argument("--steps", type=int)
    gerar.add_argument("--nfe-budget", type=float, dest="nfe_budget")
    gerar.add_argument("--strategy", choices=["schedule_random", "entropy_count"])
    gerar.add_argument("--sampler", choices=["argmax", "nucleus"])
    gerar.add_argument("--temperature", type=float)
    gerar.add_argument("--top-p", type=float, dest="top_p")
    gerar.add_argument("--sm", type=_on_off, dest="sm_enabled", metavar="on|off")
    gerar.add_argument("--td", help="modo:limiar da realimentação dependente do passo")
    gerar.add_argument("--seed", type=int)
    gerar.add_argument("--trace", help="CSV com um registro por passo")

    avaliar = sub.add_parser("eval", help="avalia um checkpoint")
    avaliar.add_argument("--checkpoint", required=True)
    avaliar.add_argument("--sm", type=_on_off, dest="sm_on", metavar="on|off")
    avaliar.add_argument("--mc-samples", type=int, dest="mc_samples")
    avaliar.add_argument("--n-samples", type=int, dest="n_samples")
    avaliar.add_argument("--prompted", action="store_true", default=None)
    avaliar.add_argument("--seed", type=int)
    avaliar.add_argument("--output", help="destino do relatório JSON")

    inspecionar = sub.add_parser("inspect", help="resume um checkpoint")
    inspecionar.add_argument("--checkpoint", required=True)
    return parser


def executar(argv=None):
    """Interpreta os argumentos e executa o subcomando; lança exceções do sistema"""
    args = criar_parser().parse_args(argv)
    if NUM_THREADS > 0:
        torch.set_num_threads(NUM_THREADS)

    if args.comando == "train":
        controller = RunController(RunConfig.from_file(args.config))
        caminho = controller.cmd_train(resume=args.resume)
        log_info(f"Checkpoint final: {caminho}")
    elif args.comando == "generate":
        opcoes = {c: getattr(args, c) for c in (
            "length", "steps", "nfe_budget", "strategy", "sampler", "temperature", "top_p", "sm_enabled", "td", "seed")}
        texto, _ = RunController().cmd_generate(args.checkpoint, args.prompt, opcoes, args.trace)
        print(texto)
    elif args.comando == "eval":
        opcoes = {c: getattr(args, c) for c in ("sm_on", "mc_samples", "n_samples", "prompted", "seed")}
        relatorio = RunController().cmd_eval(args.checkpoint, opcoes, args.output)
        print(json.dumps(relatorio, indent=2, sort_keys=True))
    else:
        print(formatar_inspecao(RunController().cmd_inspect(args.checkpoint)))
    return 0


def main(argv=None):
    """Função principal do sistema"""
    try:
        return executar(argv)
    except ValidationError as e:
        log_error(f"Configuração inválida: {e}")
        return 1
    except SoftMaskError as e:
        log_error(str(e))
        return e.exit_code
    except KeyboardInterrupt:
        log_info("Interrupção de teclado detectada. Encerrando...")
        return 2


if __name__ == "__main__":
    sys.exit(main())
