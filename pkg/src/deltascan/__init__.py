"""Delta-rule state evolution kernels: sequential oracle, chunk-parallel UT-transform
kernel, 2-D multi-directional scanning, desk-scale restoration blocks and a
few-step DDPM sampler for prior vectors."""

from .chunk import UTFactors, causal_mask, chunk_advance, chunk_bounds, chunked_scan, flops_estimate, ut_transform
from .errors import ContractViolation, NumericError
from .state import EvolutionConfig, SequenceBatch, delta_step, loss_gradient, sequential_scan

__all__ = [
    "ContractViolation", "EvolutionConfig", "NumericError", "SequenceBatch", "UTFactors", "causal_mask",
    "chunk_advance", "chunk_bounds", "chunked_scan", "delta_step", "flops_estimate", "loss_gradient",
    "sequential_scan", "ut_transform",
]
