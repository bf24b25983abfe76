"""Plain-text formats: whitespace matrices, key-value blocks and CSV exports."""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .errors import MatrixFormatError


def parse_matrix(text: str, square: bool = True) -> np.ndarray:
    """First line n, then n rows of whitespace-separated decimals.

    With ``square`` false the first line is ``n k`` for an n x k matrix.
    Blank lines and ``#`` comments are ignored; errors name the line.
    """
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows:
        raise MatrixFormatError(1, "empty matrix file")
    lineno, head = rows[0]
    try:
        dims = [int(h) for h in head]
    except ValueError:
        raise MatrixFormatError(lineno, f"expected the dimension, got {' '.join(head)!r}") from None
    if square:
        if len(dims) != 1 or dims[0] < 1:
            raise MatrixFormatError(lineno, "first line must be a single positive integer n")
        n, k = dims[0], dims[0]
    else:
        if len(dims) not in (1, 2) or min(dims) < 1:
            raise MatrixFormatError(lineno, "first line must be 'n' or 'n k' with positive integers")
        n, k = dims[0], dims[-1]
    body = rows[1:]
    if len(body) != n:
        where = body[n][0] if len(body) > n else (body[-1][0] if body else lineno)
        raise MatrixFormatError(where, f"expected {n} rows, found {len(body)}")
    out = np.empty((n, k))
    for i, (ln, toks) in enumerate(body):
        if len(toks) != k:
            raise MatrixFormatError(ln, f"expected {k} entries, found {len(toks)}")
        try:
            vals = [float(t) for t in toks]
        except ValueError as exc:
            raise MatrixFormatError(ln, str(exc)) from None
        if not all(math.isfinite(v) for v in vals):
            raise MatrixFormatError(ln, "entries must be finite")
        out[i] = vals
    return out


def read_matrix(path, square: bool = True) -> np.ndarray:
    return parse_matrix(Path(path).read_text(), square=square)


def format_matrix(M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    head = str(M.shape[0]) if M.shape[0] == M.shape[1] else f"{M.shape[0]} {M.shape[1]}"
    return "\n".join([head] + [" ".join(repr(float(v)) for v in row) for row in M]) + "\n"


def format_value(v) -> str:
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(format_value(x) for x in np.ravel(np.asarray(v, dtype=object)))
    return str(v)


def format_kv(mapping: dict) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in mapping.items())


def write_kv(mapping: dict, fh) -> None:
    fh.write(format_kv(mapping))


def parse_kv(text: str) -> dict:
    """Inverse of :func:`format_kv` with values kept as strings."""
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition(" = ")
            out[k] = v
    return out


def write_anchor_csv(anchors, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["m", "t_m", "beta_m", "alpha_at_anchor", "beta_sq"])
    for m, t, b, a, b2 in anchors.rows():
        w.writerow([m, t, repr(b), repr(a), repr(b2)])


def write_iterate_trace_csv(seed: int, trace, phis, fh) -> None:
    """Per-run trace with columns seed, step, error, phi_value."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["seed", "step", "error", "phi_value"])
    for step, err, phi in zip(trace.checkpoints.tolist(), trace.errors.tolist(), np.asarray(phis).tolist()):
        w.writerow([seed, step, repr(float(err)), repr(float(phi))])


def to_csv_string(writer, *args) -> str:
    buf = io.StringIO()
    writer(*args, buf)
    return buf.getvalue()
