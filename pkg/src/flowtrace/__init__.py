"""Flow-based importance sampling for Monte Carlo evaluation of the rendering
equation, with baseline samplers, a cross-entropy training loop, and a small
inverse-rendering harness on analytic sphere/plane scenes.

Hot numeric kernels are JIT-compiled with numba when available; set
``FLOWTRACE_BACKEND=numpy`` to force the pure-numpy fallback path.
"""

from flowtrace._backend import BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"
