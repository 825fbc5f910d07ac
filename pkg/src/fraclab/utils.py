"""
General utilities: argparse helpers, console colouring, timers, CSV writing
and multi-index bookkeeping.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import math
import time
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Tuple

import pandas as pd
from colorama import Fore, Style

MultiIndex = Tuple[int, ...]

logger = logging.getLogger("fraclab.utils")

CSV_FLOAT_FORMAT = "%.17g"


def add_bool_arg(
    parser: argparse.ArgumentParser, name: str, help: str, default: bool = False, no_name=None
) -> None:
    """Add a ``--name`` / ``--no-name`` pair writing to the same destination."""
    varname = name.replace("-", "_")
    group = parser.add_mutually_exclusive_group(required=False)
    group.add_argument("--" + name, dest=varname, action="store_true", help=help)
    if no_name is None:
        no_name = "no-" + name
        no_help = "don't " + help
    else:
        no_help = help
    group.add_argument("--" + no_name, dest=varname, action="store_false", help=no_help)
    parser.set_defaults(**{varname: default})


def print_red(s):
    return print(f"{Fore.RED}{s}{Style.RESET_ALL}")


def print_green(s):
    return print(f"{Fore.GREEN}{s}{Style.RESET_ALL}")


@contextlib.contextmanager
def timer(label: str = "") -> Iterator[None]:
    old_time = time.monotonic()
    try:
        yield
    finally:
        new_time = time.monotonic()
        logger.info(f"{label or 'Time taken'}: {new_time - old_time:.3f} seconds")


def write_csv(df: pd.DataFrame, path: str | Path) -> Path:
    """Write ``df`` with 17 significant digits, LF line endings and no index."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote {path}")
    return path


def alpha_key(alpha: Sequence[int]) -> str:
    """Dash-joined text form of a multi-index, e.g. ``(1, 0) -> "1-0"``."""
    return "-".join(str(int(a)) for a in alpha)


def parse_alpha(key: str | int | Sequence[int], n: int) -> MultiIndex:
    """Inverse of :func:`alpha_key`; also accepts integers (n = 1) and sequences."""
    if isinstance(key, int):
        parts = [key]
    elif isinstance(key, str):
        parts = [int(p) for p in key.split("-")]
    else:
        parts = [int(p) for p in key]
    if len(parts) != n:
        raise ValueError(f"multi-index {key!r} has {len(parts)} entries, expected {n}")
    if any(p < 0 for p in parts):
        raise ValueError(f"multi-index {key!r} has a negative entry")
    return tuple(parts)


def alpha_order(alpha: Sequence[int]) -> int:
    return int(sum(alpha))


def alpha_factorial(alpha: Sequence[int]) -> int:
    return math.prod(math.factorial(a) for a in alpha)


def multi_indices(n: int, order: int) -> list[MultiIndex]:
    """All multi-indices of exactly ``order`` in ``n`` variables, lexicographic."""
    if n == 1:
        return [(order,)]
    out = []
    for first in range(order, -1, -1):
        out.extend((first, *rest) for rest in multi_indices(n - 1, order - first))
    return sorted(out)


def multi_indices_up_to(n: int, m: int) -> list[MultiIndex]:
    """All multi-indices with order ≤ m, ordered by order then lexicographically."""
    return [alpha for order in range(m + 1) for alpha in multi_indices(n, order)]


def chunks(seq: Sequence, size: int) -> Iterable[Sequence]:
    for i in range(0, len(seq), size):
        yield seq[i : i + size]
