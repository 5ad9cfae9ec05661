"""Piecewise-affine paths on a time grid and weighted path ensembles."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .measure import DiscreteMeasure, coalesce, _freeze

HORIZON_TOL = 1e-12


@dataclass(frozen=True)
class PiecewisePath:
    """A continuous path on [0, T], affine between strictly increasing grid times."""

    grid: np.ndarray  # (K+1,)
    nodes: np.ndarray  # (K+1, d)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float).ravel()
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        if grid.shape[0] != nodes.shape[0] or grid.shape[0] < 1:
            raise InputError("grid and nodes must have matching nonzero length")
        if grid.shape[0] > 1 and np.any(np.diff(grid) <= 0):
            raise InputError("grid times must be strictly increasing")
        if not np.all(np.isfinite(grid)) or not np.all(np.isfinite(nodes)):
            raise InputError("grid and nodes must be finite")
        object.__setattr__(self, "grid", _freeze(grid))
        object.__setattr__(self, "nodes", _freeze(nodes))

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def __call__(self, t) -> np.ndarray:
        """Evaluate the path at time(s) ``t`` (clamped to the grid range)."""
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((ts.shape[0], self.dim))
        for k in range(self.dim):
            out[:, k] = np.interp(ts, self.grid, self.nodes[:, k])
        return out[0] if np.isscalar(t) or np.asarray(t).ndim == 0 else out

    def slopes(self) -> np.ndarray:
        """Per-segment velocity vectors, shape (K, d)."""
        if self.grid.shape[0] < 2:
            return np.zeros((0, self.dim))
        dt = np.diff(self.grid)[:, None]
        return np.diff(self.nodes, axis=0) / dt

    def restricted(self, T: float) -> "PiecewisePath":
        """The path restricted to [0, T], T within the horizon."""
        if T > self.horizon + HORIZON_TOL:
            raise InputError(f"cannot restrict to T={T} beyond horizon {self.horizon}")
        if abs(T - self.horizon) <= HORIZON_TOL:
            return self
        keep = self.grid < T - HORIZON_TOL
        grid = np.concatenate([self.grid[keep], [T]])
        nodes = np.vstack([self.nodes[keep], self(T)[None, :]])
        return PiecewisePath(grid, nodes)

    def to_json_dict(self) -> dict:
        return {"grid": self.grid.tolist(), "nodes": self.nodes.tolist()}


def constant_path(x, T: float) -> PiecewisePath:
    """The path identically equal to ``x`` on [0, T]."""
    pt = np.atleast_1d(np.asarray(x, dtype=float))
    if T <= 0:
        raise InputError("horizon must be positive")
    return PiecewisePath(np.array([0.0, T]), np.stack([pt, pt]))


@dataclass(frozen=True)
class Provenance:
    """Where an ensemble came from: exact-tree | monte-carlo | limit-flow."""

    kind: str
    seed: int | None = None
    sample_count: int | None = None

    def __post_init__(self):
        if self.kind not in ("exact-tree", "monte-carlo", "limit-flow"):
            raise InputError(f"unknown provenance kind {self.kind!r}")


@dataclass(frozen=True)
class PathEnsemble:
    """A weighted finite set of piecewise-affine paths on a common horizon."""

    paths: tuple
    weights: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        paths = tuple(self.paths)
        if len(paths) < 1:
            raise InputError("an ensemble needs at least one path")
        weights = np.asarray(self.weights, dtype=float).ravel()
        if weights.shape[0] != len(paths):
            raise InputError("paths and weights must have equal length")
        if np.any(weights <= 0) or abs(float(weights.sum()) - 1.0) > 1e-12:
            raise InputError("weights must be positive and sum to 1 within 1e-12")
        T = paths[0].horizon
        d = paths[0].dim
        for p in paths:
            if abs(p.horizon - T) > HORIZON_TOL:
                raise InputError("all paths must share the ensemble horizon")
            if p.dim != d:
                raise InputError("all paths must share the ambient dimension")
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "weights", _freeze(weights))

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @property
    def horizon(self) -> float:
        return self.paths[0].horizon

    @property
    def dim(self) -> int:
        return self.paths[0].dim

    def evaluate(self, t) -> DiscreteMeasure:
        """Push-forward under the evaluation map e_t, exact duplicates merged."""
        if t < -HORIZON_TOL or t > self.horizon + HORIZON_TOL:
            raise InputError(f"time {t} outside [0, {self.horizon}]")
        atoms = np.stack([p(float(t)) for p in self.paths])
        return coalesce(DiscreteMeasure(atoms, self.weights), 0.0)

    def restricted(self, T: float) -> "PathEnsemble":
        """The ensemble with every path restricted to [0, T]."""
        return PathEnsemble(
            tuple(p.restricted(T) for p in self.paths), self.weights, self.provenance
        )

    def common_grid(self) -> np.ndarray | None:
        """The shared grid if all paths use identical grids, else None."""
        g = self.paths[0].grid
        for p in self.paths[1:]:
            if p.grid.shape != g.shape or not np.array_equal(p.grid, g):
                return None
        return g

    def to_json_dict(self) -> dict:
        return {
            "provenance": {
                "kind": self.provenance.kind,
                "seed": self.provenance.seed,
                "sample_count": self.provenance.sample_count,
            },
            "weights": self.weights.tolist(),
            "paths": [p.to_json_dict() for p in self.paths],
        }

    def to_csv(self) -> str:
        """One row per (path id, time, coordinates..., weight)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["path_id", "time", *[f"x{k}" for k in range(self.dim)], "weight"]
        )
        for i, (p, w) in enumerate(zip(self.paths, self.weights)):
            for t, node in zip(p.grid, p.nodes):
                writer.writerow([i, repr(float(t)), *[repr(float(c)) for c in node], repr(float(w))])
        return buf.getvalue()


def ensemble_from_json(s: str) -> PathEnsemble:
    d = json.loads(s)
    prov = d["provenance"]
    return PathEnsemble(
        tuple(
            PiecewisePath(np.asarray(p["grid"]), np.asarray(p["nodes"]))
            for p in d["paths"]
        ),
        np.asarray(d["weights"], dtype=float),
        Provenance(prov["kind"], prov.get("seed"), prov.get("sample_count")),
    )
