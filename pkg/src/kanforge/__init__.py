"""Kolmogorov-Arnold networks with B-spline edges, trained by LBFGS."""

__version__ = "0.1.0"

from .network import KanModel, forward, new_kan  # noqa: E402
from .pipeline import PAPER_ARCHS, Arch, run_pipeline  # noqa: E402

__all__ = ["KanModel", "forward", "new_kan", "PAPER_ARCHS", "Arch", "run_pipeline", "__version__"]
