"""Byte-level and BPE language-modeling lab: AR and masked-diffusion objectives,
bits-per-byte evaluation, FLOPs budgeting, scaling fits and permutation probes."""

__version__ = "0.1.0"
