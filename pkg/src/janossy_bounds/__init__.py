"""Latent-dimension lower bounds for Deep Sets and k-ary Janossy pooling."""

from importlib.metadata import PackageNotFoundError, version

from .bounds import bounds_table, deep_sets_lower_bound, indexed_lower_bound, shared_janossy_lower_bound
from .config import REPO_ROOT


def _version_from_file() -> str:
    version_file = REPO_ROOT / "VERSION"
    if version_file.exists():
        return version_file.read_text(encoding="utf-8").strip()
    return "0.0.0"


try:
    __version__ = version("janossy-bounds")
except PackageNotFoundError:
    __version__ = _version_from_file()

__all__ = [
    "REPO_ROOT",
    "__version__",
    "bounds_table",
    "deep_sets_lower_bound",
    "indexed_lower_bound",
    "shared_janossy_lower_bound",
]
