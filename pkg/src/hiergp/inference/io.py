"""Draws CSV and diagnostics JSON sidecar."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from hiergp.errors import ConfigError, ParseError
from hiergp.inference.nuts import PosteriorDraws

DRAWS_SCHEMA_VERSION = 1


def _fmt(v):
    return format(float(v), ".17g")


def save_draws(draws, path, diagnostics=None, meta=None):
    """Write draws as CSV (``chain, iteration, divergent, <params...>``) plus a JSON sidecar.

    The sidecar, ``<path stem>.json``, holds the schema version, model
    metadata, per-chain step sizes and the diagnostics.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iteration", "divergent"] + list(draws.names))
        for c in range(draws.n_chains):
            for i in range(draws.n_iters):
                w.writerow([c, i, int(draws.divergence_flags[c, i])]
                           + [_fmt(v) for v in draws.draws[c, i]])
    side = {
        "schema_version": DRAWS_SCHEMA_VERSION,
        "meta": dict(draws.meta, **(meta or {})),
        "step_size": [float(s) for s in draws.step_size],
        "diagnostics": diagnostics.to_dict() if diagnostics is not None else None,
    }
    path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path


def load_draws(path):
    """Read draws written by :func:`save_draws`; sidecar metadata goes to ``draws.meta``."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"draws file not found: {path}")
    side_path = path.with_suffix(".json")
    side = json.loads(side_path.read_text()) if side_path.exists() else {}
    version = side.get("schema_version", DRAWS_SCHEMA_VERSION)
    if version != DRAWS_SCHEMA_VERSION:
        raise ConfigError(
            f"draws schema version {version} does not match expected {DRAWS_SCHEMA_VERSION}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty draws file", line=1)
        for col in ("chain", "iteration", "divergent"):
            if col not in header[:3]:
                raise ParseError(f"missing column {col!r}", line=1)
        names = header[3:]
        chains, divs, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                chains.append(int(row[0]))
                divs.append(bool(int(row[2])))
                rows.append([float(v) for v in row[3:]])
            except ValueError as exc:
                raise ParseError(f"malformed value ({exc})", line=lineno) from None
    if not rows:
        raise ParseError("draws file has no rows", line=2)
    chains = np.asarray(chains)
    n_chains = int(chains.max()) + 1
    n_iters = len(rows) // n_chains
    if n_chains * n_iters != len(rows):
        raise ParseError("chains have unequal lengths")
    arr = np.asarray(rows).reshape(n_chains, n_iters, len(names))
    div = np.asarray(divs).reshape(n_chains, n_iters)
    step = np.asarray(side.get("step_size", [np.nan] * n_chains), dtype=float)
    return PosteriorDraws(names, arr, div, step, meta=side.get("meta", {}))
