"""Self-speculative sampling for masked discrete diffusion at desk scale.

A non-causal (masked-denoising) stack drafts tokens in parallel; a small
causal stack over the generation ordering verifies them with speculative
accept/reject steps.  The package bundles exact tabular oracles, dynamic
programs for the sampler's sequence likelihood, a compiled chain-simulation
kernel, training, evaluation sweeps, and a CLI.
"""

from .core import (
    Event,
    EventTrace,
    Ordering,
    RevealState,
    SequenceSpec,
    SpecError,
    make_rng,
    sample_categorical,
    sample_ordering,
)
from .sampler import SamplerConfig, mdm_sample, spec_sample_basic, spec_sample_full
from .schedule import NoiseSchedule, TimeGrid, WindowSpec

__version__ = "0.1.0"

__all__ = [
    "Event",
    "EventTrace",
    "NoiseSchedule",
    "Ordering",
    "RevealState",
    "SamplerConfig",
    "SequenceSpec",
    "SpecError",
    "TimeGrid",
    "WindowSpec",
    "__version__",
    "make_rng",
    "mdm_sample",
    "sample_categorical",
    "sample_ordering",
    "spec_sample_basic",
    "spec_sample_full",
]
