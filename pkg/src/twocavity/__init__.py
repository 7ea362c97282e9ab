"""Two cascaded atom-cavity systems coupled through two shared waveguide modes.

The submodules build the Hilbert space and operators (``model``), integrate
no-jump and master-equation dynamics (``dynamics``), evaluate detection
densities (``observables``), sample quantum-jump records (``trajectories``) and
quantify entanglement (``entanglement``).
"""

from .model import SystemParams, build_model, enumerate_basis

__version__ = "0.1.0"

__all__ = ["SystemParams", "build_model", "enumerate_basis", "__version__"]
