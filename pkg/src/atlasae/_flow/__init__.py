"""Exact transport solver with a compiled core and a pure-Python fallback.

The compiled extension is preferred when present; both backends implement
the same network simplex and return identical optimal costs.
"""

try:
    from ._core import solve_transport

    BACKEND = "compiled"
except ImportError:  # extension not built
    from ._pure import solve_transport

    BACKEND = "pure-python"

from ._pure import solve_transport as solve_transport_pure

__all__ = ["solve_transport", "solve_transport_pure", "BACKEND"]
