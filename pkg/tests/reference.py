"""Published reference values used by several test modules."""

from __future__ import annotations

# u = 6356, p = 0.999; columns safe/sqrt, safe/ln, progress/sqrt, progress/ln
TABLE_U = 6356
TABLE_COLUMNS = [
    ("safe", "sqrt"),
    ("safe", "ln"),
    ("progress", "sqrt"),
    ("progress", "ln"),
]
TABLE = {
    "honest": [549, 3985, 4615, 6053],
    "boundary_t": [5807, 2371, 1741, 303],
    "ratio": ["1.09454", "2.68073", "3.65078", "20.9769"],
    "bound_value": ["76.20367", "7.77107", "41.72529", "5.71373"],
    "deterministic_size": [5808, 2372, 3483, 607],
    "set_size": [76, 7, 41, 5],
    "size_reduction": ["76.421052", "338.85714", "84.951219", "121.4"],
    "achieved_p": ["0.9990005", "0.9990004", "0.9990073", "0.9990014"],
}

MESSAGE_BOUNDS = {1272: 728, 1614: 880}
