"""Selection between the compiled kernel and the NumPy fallback.

The compiled extension is preferred when importable; set
``SAE_FH_BACKEND=python`` or ``SAE_FH_BACKEND=compiled`` to force either.
Both backends implement the same search policy and are pinned against each
other in the test suite, so the choice affects speed, not results (beyond
floating-point round-off inherent in the different factorisations).

``SAE_FH_THREADS`` caps the worker count used by the Monte Carlo and
bootstrap drivers. Results are byte-identical for any worker count: every
replicate writes to its own slot of a preallocated array and reductions
happen afterwards in a fixed order.
"""

from __future__ import annotations

import os

from . import _pykernels

try:
    from . import _fhcore
except ImportError:  # pragma: no cover - depends on the build
    _fhcore = None


def get_backend(name: str | None = None):
    """Return a kernel module by name, or the active default."""
    if name in (None, "", "auto"):
        forced = os.environ.get("SAE_FH_BACKEND", "auto").strip().lower()
    else:
        forced = name.strip().lower()
    if forced in ("auto",):
        return _fhcore if _fhcore is not None else _pykernels
    if forced in ("python", "py", "numpy"):
        return _pykernels
    if forced in ("compiled", "c", "native"):
        if _fhcore is None:
            raise ImportError(
                "the compiled backend was requested but fhsae._fhcore is not "
                "built; reinstall without FHSAE_SKIP_EXTENSION or use "
                "SAE_FH_BACKEND=python"
            )
        return _fhcore
    raise ValueError(f"unknown backend {forced!r} (use 'compiled' or 'python')")


def active_backend_name() -> str:
    return get_backend().NAME


def suitable_backend(p: int):
    """The active backend, downgraded to Python when p exceeds the kernel cap."""
    be = get_backend()
    if be is not _pykernels and p > _fhcore.MAX_P:
        return _pykernels
    return be


def resolve_threads(n_tasks: int) -> int:
    """Worker count for embarrassingly parallel drivers.

    Honors SAE_FH_THREADS when set; defaults to the CPU count. Always at
    least 1 and never more than the number of tasks.
    """
    env = os.environ.get("SAE_FH_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ValueError(f"SAE_FH_THREADS must be an integer, got {env!r}") from exc
    else:
        n = os.cpu_count() or 1
    return max(1, min(n, n_tasks))
