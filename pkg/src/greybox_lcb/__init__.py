"""Lower-confidence-bound Bayesian optimization for problems with a known outer loss.

Submodules: ``model`` (Gaussian posterior and confidence sets), ``problems``
(losses and benchmarks), ``acquisition``, ``strategies``, ``harness``,
``verification``, ``config``, ``plotting`` and ``cli``.
"""

__version__ = "0.1.0"
