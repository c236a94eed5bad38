"""Overflow probabilities of tree Jackson networks by subsolution-based importance sampling."""
from .exact import first_passage, state_count
from .network import (
    PerNodeBuffer,
    SharedBuffer,
    TreeNetwork,
    decay_rate,
    load_config,
    validate,
)
from .sampler import decay_diagnostics, estimate
from .subsolution import MollifierParams, build_gradient_table, choose_params

__version__ = "0.1.0"
