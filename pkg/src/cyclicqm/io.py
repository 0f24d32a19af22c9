"""Atomic, deterministic file output for factors, densities, messages and curves."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bridge import MessagePair
from .kernels import Factor
from .quantization import DensityMatrix


def fmt(value) -> str:
    """Round-trip float formatting, identical across runs."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, str):
        return value
    return format(float(value), ".17g")


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path: str | os.PathLike) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def write_json(path: str | os.PathLike, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# --------------------------------------------------------------------------
# domain objects


def save_factor_npz(path: str | os.PathLike, factor: Factor) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
    os.close(fd)
    try:
        np.savez(
            tmp,
            matrix=factor.matrix,
            quadrature_weight=factor.quadrature_weight,
            includes_normalization=factor.includes_normalization,
            stoquastic=factor.stoquastic,
        )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_factor_npz(path: str | os.PathLike) -> Factor:
    with np.load(path) as d:
        return Factor(
            d["matrix"],
            None,
            bool(d["includes_normalization"]),
            float(d["quadrature_weight"]),
            bool(d["stoquastic"]),
        )


def write_factor_csv(path, factor: Factor) -> Path:
    M = factor.matrix
    rows = ((i, j, M[i, j]) for i in range(M.shape[0]) for j in range(M.shape[1]))
    return write_csv(path, ["x_index", "xprime_index", "value"], rows)


def write_density_csv(path, rho: DensityMatrix) -> Path:
    r = rho.rho
    rows = ((i, j, r[i, j].real, r[i, j].imag) for i in range(r.shape[0]) for j in range(r.shape[1]))
    return write_csv(path, ["row", "col", "re", "im"], rows)


def read_density_csv(path, hbar_cycle: float = 1.0, weight: float = 1.0) -> DensityMatrix:
    _, d = read_csv(path)
    n = int(d[:, 0].max()) + 1
    rho = np.zeros((n, n), dtype=complex)
    rho[d[:, 0].astype(int), d[:, 1].astype(int)] = d[:, 2] + 1j * d[:, 3]
    return DensityMatrix(rho, hbar_cycle, weight)


def write_marginals_csv(path, marginals: np.ndarray) -> Path:
    rows = ((l, i, marginals[l, i]) for l in range(marginals.shape[0]) for i in range(marginals.shape[1]))
    return write_csv(path, ["step", "x_index", "p"], rows)


def write_messages_csv(path, pair: MessagePair) -> Path:
    f, b = pair.forward, pair.backward
    rows = ((l, i, f[l, i], b[l, i]) for l in range(f.shape[0]) for i in range(f.shape[1]))
    return write_csv(path, ["step", "x_index", "mu_fwd", "mu_bwd"], rows)


def write_observables_csv(path, records: Sequence[dict]) -> Path:
    cols = ["step", "t", "trace_re", "purity", "pos_mean", "pos_var"]
    return write_csv(path, cols, ([r[c] for c in cols] for r in records))


def write_curve_csv(path, x_name: str, x: np.ndarray, columns: dict[str, np.ndarray]) -> Path:
    names = list(columns)
    data = [np.asarray(x)] + [np.asarray(columns[c]) for c in names]
    return write_csv(path, [x_name] + names, zip(*data))
