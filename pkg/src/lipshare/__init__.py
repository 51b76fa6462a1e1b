"""Lipschitz-quotient predictability analysis, HMM task modes and gated shared control."""

__version__ = "0.1.0"

from .arbitration import BlendConfig, blend, replay, voluntary_effort, voluntary_ratio
from .data import (
    DemoSet,
    Demonstration,
    SampleSet,
    StandardizationStats,
    apply_standardizer,
    fit_standardizer,
    load_demoset,
    make_windows,
    resample,
    save_demoset,
)
from .errors import LipshareError
from .gate import GateConfig, train_gate
from .hmm import FitConfig, GaussianHmm, fit_baum_welch, forward_filter, viterbi
from .lipschitz import mode_quotients, pointwise_quotients, select_threshold
from .policy import PolicyConfig, train_policy
from .report import PipelineConfig, compare_segmentations, emit_report, tradeoff_sweep
from .segmentation import make_gate_labels, random_segmentation, split_rv
from .stats import welch_t_test
from .synthgen import SynthConfig, default_config, generate

__all__ = [
    "BlendConfig", "DemoSet", "Demonstration", "FitConfig", "GateConfig", "GaussianHmm", "LipshareError",
    "PipelineConfig", "PolicyConfig", "SampleSet", "StandardizationStats", "SynthConfig", "apply_standardizer",
    "blend", "compare_segmentations", "default_config", "emit_report", "fit_baum_welch", "fit_standardizer",
    "forward_filter", "generate", "load_demoset", "make_gate_labels", "make_windows", "mode_quotients",
    "pointwise_quotients", "random_segmentation", "replay", "resample", "save_demoset", "select_threshold",
    "split_rv", "train_gate", "train_policy", "tradeoff_sweep", "viterbi", "voluntary_effort",
    "voluntary_ratio", "welch_t_test",
]
