"""Cell-free massive MIMO simulator and spectral-efficiency optimizer for
multicarrier-division, time-division and in-band full duplexing."""

__version__ = "0.1.0"

from .config import SimulationConfig, load_config

__all__ = ["SimulationConfig", "load_config", "__version__"]
