"""
Result files and console tables for the benchmark programs.

Every CSV starts with a header row, uses "," as separator and stores a
complex number as two columns NAME_re and NAME_im. Floats are written
with repr() so that reading a file back reproduces the values exactly.
Each row carries the seed of the run that produced it.
"""

import csv
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from wepsmw.resinv import EigResult

EIGENPAIR_FIELDS: List[str] = ["kind", "index", "re", "im", "seed"]

OUTER_FIELDS: List[str] = [
    "iteration",
    "gamma_re",
    "gamma_im",
    "residual",
    "error",
    "inner_iterations",
    "inner_tolerance",
    "inner_status",
    "newton_seconds",
    "inner_seconds",
    "seconds",
    "seed",
]

PRECOND_FIELDS: List[str] = [
    "n_z",
    "n_x",
    "N_z",
    "N_x",
    "layout",
    "iteration",
    "residual",
    "error",
    "seed",
]

SCALING_FIELDS: List[str] = [
    "n_z",
    "n_x",
    "unknowns",
    "N_z",
    "N_x",
    "method",
    "total_seconds",
    "precompute_seconds",
    "precompute_fraction",
    "apply_seconds",
    "outer_iterations",
    "inner_iterations",
    "gamma_re",
    "gamma_im",
    "status",
    "note",
    "seed",
]


def _format(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: str, fields: Sequence[str], rows: Iterable[Dict[str, Any]]) -> int:
    """
    Write `rows` (dicts keyed by `fields`) to `path`; returns the row count.
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fields))
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _format(row.get(key, "")) for key in fields})
            count += 1
    return count


def read_csv(path: str) -> List[Dict[str, str]]:
    """
    Read a CSV written by `write_csv` as a list of string dicts.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def write_eigenpair(path: str, result: EigResult, seed: int) -> None:
    """
    One "gamma" row followed by one "v" row per vector entry.
    """
    rows = [{"kind": "gamma", "index": 0, "re": result.gamma.real, "im": result.gamma.imag}]
    rows.extend(
        {"kind": "v", "index": i, "re": value.real, "im": value.imag}
        for i, value in enumerate(result.v)
    )
    for row in rows:
        row["seed"] = seed
    write_csv(path, EIGENPAIR_FIELDS, rows)


def read_eigenpair(path: str) -> Tuple[complex, np.ndarray, int]:
    """
    Inverse of `write_eigenpair`: (gamma, v, seed).
    """
    rows = read_csv(path)
    if not rows or rows[0]["kind"] != "gamma":
        raise ValueError(f"{path} does not start with an eigenvalue row")
    gamma = complex(float(rows[0]["re"]), float(rows[0]["im"]))
    entries = [row for row in rows[1:] if row["kind"] == "v"]
    v = np.empty(len(entries), dtype=complex)
    for row in entries:
        v[int(row["index"])] = complex(float(row["re"]), float(row["im"]))
    return gamma, v, int(rows[0]["seed"])


def outer_rows(result: EigResult, seed: int) -> List[Dict[str, Any]]:
    return [
        {
            "iteration": record.iteration,
            "gamma_re": record.gamma.real,
            "gamma_im": record.gamma.imag,
            "residual": record.residual,
            "error": record.error,
            "inner_iterations": record.inner_iterations,
            "inner_tolerance": record.inner_tolerance,
            "inner_status": record.inner_status,
            "newton_seconds": record.newton_seconds,
            "inner_seconds": record.inner_seconds,
            "seconds": record.seconds,
            "seed": seed,
        }
        for record in result.history
    ]


def duration(seconds: float) -> str:
    """
    Short human-readable duration, e.g. "42.0s", "3.5m", "1.2h".
    """
    if seconds <= 60:
        return f"{seconds:.1f}s"
    minutes = seconds / 60
    if minutes <= 60:
        return f"{minutes:.1f}m"
    return f"{minutes / 60:.1f}h"


class ConsoleTable:
    """
    Tab-separated table printed to the console row by row.

    `columns` pairs each header with a format function applied to the
    matching field of every row.
    """

    def __init__(self, columns: Sequence[Tuple[str, str]], stream=None) -> None:
        self.columns: List[Tuple[str, str]] = list(columns)
        self.stream = stream
        self._started = False

    def header(self) -> str:
        return "\t".join(name for name, _ in self.columns)

    def format(self, row: Dict[str, Any]) -> str:
        cells = []
        for name, spec in self.columns:
            value = row.get(name)
            if value is None or value == "":
                cells.append("")
            elif spec:
                cells.append(format(value, spec))
            else:
                cells.append(str(value))
        return "\t".join(cells)

    def print(self, row: Dict[str, Any]) -> None:
        if not self._started:
            print(self.header(), file=self.stream)
            self._started = True
        print(self.format(row), file=self.stream)


def summary(result: EigResult, seed: int, predicted: Optional[float] = None) -> str:
    """
    Multi-line summary of a residual inverse iteration run.
    """
    observed = result.convergence_factor()
    predicted = result.predicted_factor if predicted is None else predicted
    seconds = sum(record.seconds for record in result.history)
    lines = [
        f"gamma\t{result.gamma.real:.12f}{result.gamma.imag:+.12f}i",
        f"sigma\t{result.sigma.real:.6f}{result.sigma.imag:+.6f}i",
        f"converged\t{result.converged}",
        f"outer iterations\t{len(result.history)}",
        f"inner iterations\t{sum(record.inner_iterations for record in result.history)}",
        f"residual\t{result.residual:.3e}",
        f"observed factor\t{observed:.3e}" if observed is not None else "observed factor\t",
        f"predicted factor |gamma-sigma|\t{predicted:.3e}",
        f"time\t{duration(seconds)}",
        f"seed\t{seed}",
    ]
    return "\n".join(lines)
