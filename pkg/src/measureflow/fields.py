"""Probability-vector-field specifications and numerical dissipativity certifiers.

A ``PvfSpec`` describes one section selector: evaluating it at a discrete
measure yields exactly one tangent measure whose x-marginal is the input
measure (the structural condition of the scheme).  Multivalued experiments
supply several specs.  Field closures must be pure and reentrant.

The ``check_*`` functions are sample-based certifiers, not proofs: the
dissipativity conditions quantify over all measures and couplings, which has
no finite certificate, so reports carry explicit violation witnesses and an
empirically fitted best constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import InputError, NumericDomainError
from .measure import (
    Coupling,
    DiscreteMeasure,
    TangentCoupling,
    TangentMeasure,
    coalesce,
)

_CHECK_SLACK = 1e-10


@dataclass(frozen=True)
class NoiseSpace:
    """A finite label set with a probability vector."""

    labels: tuple
    weights: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if len(labels) != weights.shape[0] or len(labels) < 1:
            raise InputError("labels and weights must have equal nonzero length")
        if np.any(weights <= 0) or abs(float(weights.sum()) - 1.0) > 1e-12:
            raise InputError("noise weights must be positive and sum to 1")
        object.__setattr__(self, "labels", labels)
        w = weights.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)


def uniform_noise(labels: Sequence) -> NoiseSpace:
    labels = tuple(labels)
    return NoiseSpace(labels, np.full(len(labels), 1.0 / len(labels)))


@dataclass(frozen=True)
class SampledField:
    """v = g(x, u) with u drawn from a finite noise space."""

    g: Callable[[np.ndarray, object], np.ndarray]
    noise: NoiseSpace


@dataclass(frozen=True)
class InteractionField:
    """v = f(x, y) with the partner y drawn from the measure itself."""

    f: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StochasticInteractionField:
    """v = h(x, y, u): interaction partner plus an independent noise label."""

    h: Callable[[np.ndarray, np.ndarray, object], np.ndarray]
    noise: NoiseSpace


@dataclass(frozen=True)
class NonlocalSampledField:
    """v = g(x, mu, u): the field may read the whole current measure."""

    g: Callable[[np.ndarray, DiscreteMeasure, object], np.ndarray]
    noise: NoiseSpace


@dataclass(frozen=True)
class GradientSumField:
    """v = -grad H_u(x) for a finite family of potentials, uniform noise."""

    gradients: tuple

    def __post_init__(self):
        grads = tuple(self.gradients)
        if len(grads) < 1:
            raise InputError("need at least one potential gradient")
        object.__setattr__(self, "gradients", grads)


PvfSpec = Union[
    SampledField,
    InteractionField,
    StochasticInteractionField,
    NonlocalSampledField,
    GradientSumField,
]


def _finite_or_raise(v: np.ndarray, x: np.ndarray) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not np.all(np.isfinite(v)):
        raise NumericDomainError("field produced a non-finite velocity", witness=x)
    return v


def evaluate_pvf(spec: PvfSpec, mu: DiscreteMeasure) -> TangentMeasure:
    """The tangent measure F[mu] selected by the spec at ``mu``.

    The x-marginal of the result equals ``mu``: velocities are attached to the
    existing atoms and only exact duplicate (x, v) pairs are merged.
    """
    xs, vs, ws = [], [], []
    if isinstance(spec, GradientSumField):
        grads = spec.gradients
        spec = SampledField(
            lambda x, u: -np.asarray(grads[u](x)), uniform_noise(range(len(grads)))
        )
    if isinstance(spec, SampledField):
        for x, w in zip(mu.atoms, mu.weights):
            for u, uw in zip(spec.noise.labels, spec.noise.weights):
                xs.append(x)
                vs.append(_finite_or_raise(spec.g(x, u), x))
                ws.append(w * uw)
    elif isinstance(spec, InteractionField):
        for x, w in zip(mu.atoms, mu.weights):
            for y, wy in zip(mu.atoms, mu.weights):
                xs.append(x)
                vs.append(_finite_or_raise(spec.f(x, y), x))
                ws.append(w * wy)
    elif isinstance(spec, StochasticInteractionField):
        for x, w in zip(mu.atoms, mu.weights):
            for y, wy in zip(mu.atoms, mu.weights):
                for u, uw in zip(spec.noise.labels, spec.noise.weights):
                    xs.append(x)
                    vs.append(_finite_or_raise(spec.h(x, y, u), x))
                    ws.append(w * wy * uw)
    elif isinstance(spec, NonlocalSampledField):
        for x, w in zip(mu.atoms, mu.weights):
            for u, uw in zip(spec.noise.labels, spec.noise.weights):
                xs.append(x)
                vs.append(_finite_or_raise(spec.g(x, mu, u), x))
                ws.append(w * uw)
    else:
        raise InputError(f"unknown field spec {type(spec).__name__}")
    phi = TangentMeasure(np.stack(xs), np.stack(vs), np.asarray(ws))
    return coalesce(phi, 0.0)


def barycenter_field(spec: PvfSpec, x, mu: DiscreteMeasure) -> np.ndarray:
    """The barycentric velocity b(x, mu): the mean of the selected section at x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(spec, GradientSumField):
        out = np.zeros_like(x)
        for g in spec.gradients:
            out = out - np.asarray(g(x), dtype=float)
        return out / len(spec.gradients)
    if isinstance(spec, SampledField):
        out = np.zeros_like(x)
        for u, uw in zip(spec.noise.labels, spec.noise.weights):
            out = out + uw * _finite_or_raise(spec.g(x, u), x)
        return out
    if isinstance(spec, InteractionField):
        out = np.zeros_like(x)
        for y, wy in zip(mu.atoms, mu.weights):
            out = out + wy * _finite_or_raise(spec.f(x, y), x)
        return out
    if isinstance(spec, StochasticInteractionField):
        out = np.zeros_like(x)
        for y, wy in zip(mu.atoms, mu.weights):
            for u, uw in zip(spec.noise.labels, spec.noise.weights):
                out = out + wy * uw * _finite_or_raise(spec.h(x, y, u), x)
        return out
    if isinstance(spec, NonlocalSampledField):
        out = np.zeros_like(x)
        for u, uw in zip(spec.noise.labels, spec.noise.weights):
            out = out + uw * _finite_or_raise(spec.g(x, mu, u), x)
        return out
    raise InputError(f"unknown field spec {type(spec).__name__}")


# ---------------------------------------------------------------------------
# dissipativity and growth certifiers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DissipativityReport:
    """Outcome of a sample-based certifier.

    ``lambda_hat`` is the empirical best constant over the tested samples (the
    largest Rayleigh quotient, or the best growth constant for check_growth).
    ``violations`` holds witness tuples for every failed sample.
    """

    kind: str
    declared: float
    lambda_hat: float
    violations: tuple
    samples_tested: int

    @property
    def passed(self) -> bool:
        return len(self.violations) == 0

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "declared": self.declared,
            "lambda_hat": self.lambda_hat,
            "passed": self.passed,
            "n_violations": len(self.violations),
            "samples_tested": self.samples_tested,
        }


def check_one_sided_lipschitz(
    b: Callable[[np.ndarray], np.ndarray],
    samples: Sequence[tuple],
    lam: float,
) -> DissipativityReport:
    """Tests <b(x1)-b(x0), x1-x0> <= lam |x1-x0|^2 on the given point pairs."""
    violations = []
    lam_hat = -np.inf
    for x0, x1 in samples:
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        dx = x1 - x0
        sq = float(np.dot(dx, dx))
        if sq == 0.0:
            continue
        lhs = float(np.dot(np.asarray(b(x1)) - np.asarray(b(x0)), dx))
        lam_hat = max(lam_hat, lhs / sq)
        if lhs > lam * sq + _CHECK_SLACK:
            violations.append((x0.copy(), x1.copy(), lhs, lam * sq))
    return DissipativityReport(
        "one-sided-lipschitz", lam, lam_hat, tuple(violations), len(samples)
    )


def check_pair_dissipativity(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    samples: Sequence[tuple],
    lam: float,
) -> DissipativityReport:
    """Tests the doubled field (f(x,y), f(y,x)) for dissipativity on X x X.

    Each sample is a pair ((x0, y0), (x1, y1)).
    """
    violations = []
    lam_hat = -np.inf
    for (x0, y0), (x1, y1) in samples:
        x0, y0, x1, y1 = (np.atleast_1d(np.asarray(z, dtype=float)) for z in (x0, y0, x1, y1))
        dx, dy = x1 - x0, y1 - y0
        sq = float(np.dot(dx, dx) + np.dot(dy, dy))
        if sq == 0.0:
            continue
        dv = np.asarray(f(x1, y1)) - np.asarray(f(x0, y0))
        dw = np.asarray(f(y1, x1)) - np.asarray(f(y0, x0))
        lhs = float(np.dot(dv, dx) + np.dot(dw, dy))
        lam_hat = max(lam_hat, lhs / sq)
        if lhs > lam * sq + _CHECK_SLACK:
            violations.append(((x0, y0), (x1, y1), lhs, lam * sq))
    return DissipativityReport(
        "pair-dissipativity", lam, lam_hat, tuple(violations), len(samples)
    )


def product_disintegration_coupling(
    phi: TangentMeasure, psi: TangentMeasure, gamma: Coupling
) -> TangentCoupling:
    """The canonical coupling of two tangent measures along a spatial plan.

    Disintegrates each tangent measure over its positions and takes, above
    every atom of ``gamma``, the product of the two conditional velocity laws.
    """
    def conditionals(tm: TangentMeasure):
        groups: dict[bytes, list] = {}
        mass: dict[bytes, float] = {}
        for x, v, w in zip(tm.positions, tm.velocities, tm.weights):
            key = x.tobytes()
            groups.setdefault(key, []).append((v, w))
            mass[key] = mass.get(key, 0.0) + w
        return groups, mass

    g0, m0 = conditionals(phi)
    g1, m1 = conditionals(psi)
    x0s, v0s, x1s, v1s, ws = [], [], [], [], []
    for x0, x1, w in zip(gamma.first_atoms, gamma.second_atoms, gamma.weights):
        k0, k1 = x0.tobytes(), x1.tobytes()
        if k0 not in g0 or k1 not in g1:
            raise InputError("gamma is not a coupling of the tangent x-marginals")
        for v0, w0 in g0[k0]:
            for v1, w1 in g1[k1]:
                x0s.append(x0)
                v0s.append(v0)
                x1s.append(x1)
                v1s.append(v1)
                ws.append(w * (w0 / m0[k0]) * (w1 / m1[k1]))
    return TangentCoupling(
        np.stack(x0s), np.stack(v0s), np.stack(x1s), np.stack(v1s), np.asarray(ws),
        phi, psi,
    )


def check_total_dissipativity(
    phi0: TangentMeasure,
    phi1: TangentMeasure,
    couplings: Sequence[TangentCoupling],
    lam: float,
    gamma: Coupling | None = None,
) -> DissipativityReport:
    """Tests int <v1-v0, x1-x0> <= lam int |x1-x0|^2 against supplied couplings.

    In addition to the supplied plans, the canonical product-of-disintegrations
    coupling is always tested, built from ``gamma`` when given and from an
    optimal coupling of the x-marginals otherwise.
    """
    plans = list(couplings)
    if gamma is None:
        from .transport import optimal_coupling

        gamma = optimal_coupling(phi0.x_marginal(), phi1.x_marginal()).coupling
    plans.append(product_disintegration_coupling(phi0, phi1, gamma))
    violations = []
    lam_hat = -np.inf
    for idx, theta in enumerate(plans):
        dx = theta.x1 - theta.x0
        lhs = float(np.sum(theta.weights * np.sum((theta.v1 - theta.v0) * dx, axis=1)))
        sq = float(np.sum(theta.weights * np.sum(dx * dx, axis=1)))
        if sq > 0:
            lam_hat = max(lam_hat, lhs / sq)
        if lhs > lam * sq + _CHECK_SLACK:
            violations.append((idx, lhs, lam * sq))
    return DissipativityReport(
        "total-dissipativity", lam, lam_hat, tuple(violations), len(plans)
    )


def check_growth(
    spec: PvfSpec, mus: Sequence[DiscreteMeasure], a: float
) -> DissipativityReport:
    """Tests the support growth bound <v, x> <= a (1 + |x|^2) on evaluated fields."""
    violations = []
    a_hat = -np.inf
    tested = 0
    for mu in mus:
        phi = evaluate_pvf(spec, mu)
        for x, v in zip(phi.positions, phi.velocities):
            tested += 1
            lhs = float(np.dot(v, x))
            bound = 1.0 + float(np.dot(x, x))
            a_hat = max(a_hat, lhs / bound)
            if lhs > a * bound + _CHECK_SLACK:
                violations.append((x.copy(), v.copy(), lhs, a * bound))
    return DissipativityReport("growth", a, a_hat, tuple(violations), tested)


def support_bound(
    spec: PvfSpec, R: float, probes: int, seed: int = 0, dim: int | None = None
) -> float:
    """Empirical rho_R: the largest |(x, v)| of F[mu] over probed mu in B_R.

    Probing is deterministic given the seed and always includes axis-aligned
    boundary Diracs, so suprema attained on the boundary are found.  When
    ``dim`` is omitted the ambient dimension is found by probing the origin.
    """
    if probes < 1:
        raise InputError("probes must be >= 1")
    if R < 0:
        raise InputError("R must be nonnegative")
    rng = np.random.default_rng(seed)
    if dim is None:
        for d in (1, 2, 3):
            try:
                evaluate_pvf(spec, DiscreteMeasure(np.zeros((1, d)), np.array([1.0])))
                dim = d
                break
            except Exception:
                continue
    if dim is None:
        raise InputError("could not determine the field dimension by probing")
    mus = [DiscreteMeasure(np.zeros((1, dim)), np.array([1.0]))]
    if R > 0:
        for k in range(dim):
            for sgn in (1.0, -1.0):
                x = np.zeros(dim)
                x[k] = sgn * R
                mus.append(DiscreteMeasure(x[None, :], np.array([1.0])))
        for _ in range(probes):
            k = int(rng.integers(1, 5))
            pts = rng.normal(size=(k, dim))
            norms = np.linalg.norm(pts, axis=1, keepdims=True)
            pts = pts / np.maximum(norms, 1e-12) * (R * rng.random((k, 1)) ** (1.0 / dim))
            w = rng.random(k)
            mus.append(DiscreteMeasure(pts, w / w.sum()))
    rho = 0.0
    for mu in mus:
        phi = evaluate_pvf(spec, mu)
        norms = np.sqrt(np.sum(phi.positions**2, axis=1) + np.sum(phi.velocities**2, axis=1))
        rho = max(rho, float(norms.max()))
    return rho
