"""Bit-adaptive multi-bit spiking neural networks.

Learnable per-layer weight bit widths, spike bit widths and temporal
lengths, trained end-to-end with straight-through gradients, plus cost
accounting (Bit Budget, S-ACE, NS-ACE) and numerical checks of the
step-size mismatch analysis.
"""

__version__ = "0.1.0"
