"""Source-free detector adaptation with spatial-prior and noise-robust losses.

Modules: ``numerics`` (tensor primitives, gradient checks), ``losses``,
``scenes`` (synthetic data), ``detector``, ``adaptation`` (mean-teacher loop,
mAP), ``bounds`` (risk-bound verification), ``config``, ``pipeline`` and
``cli``.
"""

__version__ = "0.1.0"
