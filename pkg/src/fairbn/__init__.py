"""fairbn: fairness-aware training with attribute-adaptive batch normalization.

A desk-scale toolkit built on a from-scratch reverse-mode autodiff engine:
MLP backbones whose normalization layers can be swapped for per-subgroup
adaptive batch norm, a statistical-disparity training penalty, group
fairness metrics (EOpp0 / EOpp1 / EOdd), the FATE trade-off score, and a
seeded experiment harness with delimited + rendered reports.
"""

from fairbn.tensor import Tensor, GradCheckResult, grad_check

__all__ = ["Tensor", "GradCheckResult", "grad_check"]
__version__ = "0.1.0"
