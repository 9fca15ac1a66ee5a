"""CSV readers/writers for the external file interfaces.

Floats are written with shortest round-trip repr so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import ConfigError
from .fluid import FluidSolution
from .ratefn import RateReport
from .simulate import TrajectoryPath


def _fmt(x) -> str:
    return repr(float(x))


def write_trajectory_csv(path: TrajectoryPath, fp, log_weight: float | None = None):
    """Rows: t, x_1..x_d, jump_index (initial row carries jump_index -1)."""
    w = csv.writer(fp, lineterminator="\n")
    d = path.dimension
    header = ["t"] + [f"x_{k + 1}" for k in range(d)] + ["jump_index"]
    if log_weight is not None:
        header.append("log_weight")
    w.writerow(header)
    tail = [] if log_weight is None else [_fmt(log_weight)]
    for j, t in enumerate(path.times):
        jid = -1 if j == 0 else int(path.jump_ids[j - 1])
        w.writerow([_fmt(t)] + [str(int(v)) for v in path.states[j]] + [str(jid)] + tail)


def write_fluid_csv(fluid: FluidSolution, fp):
    """Rows: t, X_*, b_ij (row-major), sigma_ij, and Sigma_ij when available."""
    w = csv.writer(fp, lineterminator="\n")
    d = fluid.dimension
    cols = ["t"] + [f"X_{k + 1}" for k in range(d)]
    cols += [f"b_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    cols += [f"sigma_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    if fluid.Sigma_ou is not None:
        cols += [f"Sigma_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    w.writerow(cols)
    for k, t in enumerate(fluid.grid):
        row = [_fmt(t)] + [_fmt(v) for v in fluid.X[k]]
        row += [_fmt(v) for v in fluid.b[k].ravel()]
        row += [_fmt(v) for v in fluid.sigma[k].ravel()]
        if fluid.Sigma_ou is not None:
            row += [_fmt(v) for v in fluid.Sigma_ou[k].ravel()]
        w.writerow(row)


def write_rate_csv(report: RateReport, fp):
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(["value", "method", "residual_max"])
    w.writerow([_fmt(report.value), report.method, _fmt(report.residual)])


def write_psi_csv(grid: np.ndarray, psi: np.ndarray, fp):
    w = csv.writer(fp, lineterminator="\n")
    d = psi.shape[1]
    w.writerow(["t"] + [f"psi_{k + 1}" for k in range(d)])
    for t, row in zip(grid, psi):
        w.writerow([_fmt(t)] + [_fmt(v) for v in row])


ESTIMATE_COLUMNS = [
    "experiment", "model", "n", "a_n", "alpha", "param",
    "estimate", "stderr", "ess", "reference", "scaled_log",
]


def write_estimates_csv(records, fp):
    """records: iterables matching ESTIMATE_COLUMNS (values already stringified or numeric)."""
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(ESTIMATE_COLUMNS)
    for rec in records:
        out = []
        for v in rec:
            if isinstance(v, float):
                out.append(_fmt(v))
            else:
                out.append(str(v))
        w.writerow(out)


def read_path_csv(fp) -> tuple[np.ndarray, np.ndarray]:
    """Candidate path file with header t, f_1..f_d."""
    if isinstance(fp, (str, bytes)):
        with open(fp, "r", newline="") as fh:
            return read_path_csv(fh)
    reader = csv.reader(fp)
    try:
        header = next(reader)
    except StopIteration:
        raise ConfigError("path file is empty", field="path-csv")
    if not header or header[0].strip() != "t":
        raise ConfigError("path file must start with header 't, f_1, ...'", field="path-csv")
    d = len(header) - 1
    if d < 1:
        raise ConfigError("path file needs at least one f column", field="path-csv")
    ts, fs = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != d + 1:
            raise ConfigError(f"line {lineno}: expected {d + 1} fields, got {len(row)}",
                              field="path-csv")
        try:
            ts.append(float(row[0]))
            fs.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}", field="path-csv")
    t = np.asarray(ts)
    f = np.asarray(fs)
    if len(t) < 2 or np.any(np.diff(t) <= 0):
        raise ConfigError("path times must be strictly increasing with >= 2 rows",
                          field="path-csv")
    return t, f
