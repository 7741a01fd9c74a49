"""Runtime resource management for dynamically scalable DNN workloads on
heterogeneous SoCs: operating-point selection plus a deterministic
scenario simulator."""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled file, e.g. ``bundled_path("data/table1.csv")``."""
    return Path(str(resources.files(__name__).joinpath(name)))
