"""Hypernetworks that generate small MLPs computing the standardized L1 norm.

Subpackages cover a float64 autodiff tape, the target network, hand-built
reference solutions, an attentional hypernetwork with a KL channel, the
beta-conditioned trainer, order-parameter analysis, and graph drawings.
"""

__version__ = "0.1.0"
