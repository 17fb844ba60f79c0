"""DeLighT-style transformer blocks on a numpy reverse-mode autodiff engine."""
from .accounting import CostReport, model_cost
from .autodiff import Tensor, count_macs, no_grad
from .block import BlockConfig, DecoderBlock, EncoderBlock, LightFFN
from .config import RunConfig
from .dextra import ConfigError, Dextra, DextraConfig, DextraPlan, group_schedule, width_schedule
from .estimator import DelightLanguageModel, DelightSeq2Seq
from .grouped import GroupLinear, feature_shuffle, input_mixer
from .model import LanguageModel, ModelConfig, Seq2SeqModel, build_model, greedy_decode
from .scaling import ScalingConfig, baseline_depth, blockwise_plan, network_depth, uniform_plan

__version__ = "0.1.0"

__all__ = [
    "BlockConfig", "ConfigError", "CostReport", "DecoderBlock", "DelightLanguageModel", "DelightSeq2Seq",
    "Dextra", "DextraConfig", "DextraPlan", "EncoderBlock", "GroupLinear", "LanguageModel", "LightFFN",
    "ModelConfig", "RunConfig", "ScalingConfig", "Seq2SeqModel", "Tensor", "baseline_depth", "blockwise_plan",
    "build_model", "count_macs", "feature_shuffle", "greedy_decode", "group_schedule", "input_mixer",
    "model_cost", "network_depth", "no_grad", "uniform_plan", "width_schedule",
]
