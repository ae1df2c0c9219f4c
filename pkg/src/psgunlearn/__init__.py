"""Boundary-search machine unlearning with perturbed sign gradients.

Modules: ``nn_core`` (dense nets and gradients), ``data`` (datasets and
forget selection), ``inner_loop`` (boundary search), ``outer_loop``
(fine-tuning on relabeled rows), ``baselines``, ``evaluation`` (metrics and
membership attack), ``theory`` (numerical checks) and ``cli``.
"""

__version__ = "0.1.0"
