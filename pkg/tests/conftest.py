import pytest
import torch

from softmask_mdlm.config.schema import (
    BackboneConfig, CorpusConfig, DecodeConfig, RunConfig, SoftMaskConfig, TrainConfig,
)
from softmask_mdlm.core.softmask import SoftMask, init_params
from softmask_mdlm.models.backbone import Denoiser
from softmask_mdlm.models.vocab import GrammarSpec
from softmask_mdlm.services.corpus import CorpusBuilder, grammar_vocab

VOCAB_PEQUENO = 11
MASK_ID = VOCAB_PEQUENO - 1


def modelo_pequeno(vocab_size=VOCAB_PEQUENO, layers=2, dim=16, max_len=16, time_conditioned=False, seed=0,
                   dtype=torch.float64):
    torch.manual_seed(seed)
    config = BackboneConfig(layers=layers, heads=2, model_dim=dim, vocab_size=vocab_size, max_len=max_len,
                            time_conditioned=time_conditioned, time_bins=8)
    return Denoiser(config, vocab_size - 1).to(dtype)


def softmask_nulo(k=3, dtype=torch.float64):
    """ω_s efetivo exatamente zero"""
    return SoftMask(k=k, raw_s=-1e4).to(dtype)


def configuracao_pequena(saida, max_len=24, raw_s_init=-4.0, total_steps=10):
    """Execução completa que treina em poucos segundos"""
    return RunConfig(
        backbone=BackboneConfig(layers=1, heads=2, model_dim=16, max_len=max_len),
        softmask=SoftMaskConfig(raw_s_init=raw_s_init),
        training=TrainConfig(total_steps=total_steps, batch_size=4, checkpoint_every=5, log_every=5, seed=3),
        corpus=CorpusConfig(n_train=64, n_valid=8, seq_len=24, grammar_max_len=12),
        decode=DecodeConfig(length=12, steps=4),
        output_dir=str(saida),
    )


@pytest.fixture
def model64():
    return modelo_pequeno()


@pytest.fixture
def softmask64():
    sm = init_params(-1.5, VOCAB_PEQUENO, k=3).to(torch.float64)
    with torch.no_grad():
        sm.raw_s.fill_(0.5)
    return sm


@pytest.fixture
def arith_spec():
    return GrammarSpec("mod_arith", 10, 16)


@pytest.fixture
def arith_vocab(arith_spec):
    return grammar_vocab(arith_spec)


@pytest.fixture
def tiny_run_config(tmp_path):
    return configuracao_pequena(tmp_path / "execucao")


@pytest.fixture
def tiny_bundle(tiny_run_config):
    return CorpusBuilder(tiny_run_config.corpus).construir()
