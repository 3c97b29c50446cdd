"""Gauss-Legendre machinery and tensorised quadrature for noised densities.

`pt_quadrature` approximates the Gaussian-smoothed density

    p(x) = integral over [-1,1]^D of p0(z) phi_sigma(x - mu z) dz

and its gradient for a compactly supported factorizable p0, by substituting
to standardised coordinates, truncating the Gaussian tail at a width set by
(tau_tail, tau_bd), and applying a composite Gauss-Legendre rule per axis.
Block indices use the canonical decomposition j = k*n_beta + r (node r of
block k).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (BadPointCount, ConvergenceFailure, DimensionTooLarge,
                     PreconditionViolated)

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _phi(y):
    return np.exp(-0.5 * np.asarray(y) ** 2) / _SQRT_2PI


@dataclass(frozen=True)
class GaussLegendreRule:
    order: int
    nodes: np.ndarray    # strictly increasing, inside (-1, 1)
    weights: np.ndarray  # positive, summing to 2


def _legendre_and_derivative(n, x):
    """P_n(x) and P_n'(x) via the three-term recurrence."""
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


def legendre_rule(n):
    """Nodes (roots of P_n) by Newton iteration from Chebyshev guesses,
    weights 2 / ((1 - x^2) P_n'(x)^2)."""
    if n < 1:
        raise ValueError("order must be >= 1")
    if n == 1:
        return GaussLegendreRule(1, np.zeros(1), np.full(1, 2.0))
    j = np.arange(1, n + 1)
    x = -np.cos(np.pi * (4 * j - 1) / (4 * n + 2))
    for _ in range(100):
        p, dp = _legendre_and_derivative(n, x)
        step = p / dp
        x = x - step
        if np.max(np.abs(step)) < 1e-15:
            break
    p, dp = _legendre_and_derivative(n, x)
    if np.max(np.abs(p)) >= 1e-14:
        raise ConvergenceFailure(f"Legendre root refinement stalled at n={n}")
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    return GaussLegendreRule(n, x, w)


@dataclass(frozen=True)
class CompositeRule:
    """m-point rule on [a, b]: m/n_beta blocks of an order-n_beta base rule."""

    a: float
    b: float
    m: int
    n_beta: int
    nodes: np.ndarray
    weights: np.ndarray


def composite_rule(a, b, m, n_beta):
    if a >= b:
        raise ValueError("need a < b")
    if n_beta < 1 or m < 1 or m % n_beta != 0:
        raise BadPointCount(f"m={m} must be a positive multiple of n_beta={n_beta}")
    base = legendre_rule(n_beta)
    half = (b - a) * n_beta / (2.0 * m)
    blocks = np.arange(m // n_beta)
    nodes = a + half * (base.nodes[None, :] + 2 * blocks[:, None] + 1)
    weights = np.broadcast_to(half * base.weights, nodes.shape)
    return CompositeRule(a, b, m, n_beta, nodes.ravel(), weights.ravel().copy())


def composite_quadrature(g, a, b, m, n_beta):
    """Integrate a 1-D callable over [a, b] with the composite rule."""
    rule = composite_rule(a, b, m, n_beta)
    return float(np.sum(rule.weights * np.asarray(g(rule.nodes), dtype=np.float64)))


@dataclass(frozen=True)
class TensorQuadratureConfig:
    m: int = 32            # points per axis
    tau_tail: float = 2.0  # tail-truncation exponent
    tau_bd: float = 1.5    # boundary exponent
    n_beta: int = 2        # base-rule order (from the smoothness of p0)


def tail_width(sigma, config):
    """Standardised half-width scale 2 sqrt(2 tau_tail) log(1/sigma)^(tau_bd + 1/2)."""
    return (2.0 * math.sqrt(2.0 * config.tau_tail)
            * math.log(1.0 / sigma) ** (config.tau_bd + 0.5))


def _axis_nodes(x_i, mu, sigma, config):
    """Composite nodes/weights on the truncated standardised interval
    [(-x_i - mu) D, (-x_i + mu) D] for one coordinate."""
    d_sigma = tail_width(sigma, config)
    rule = composite_rule((-x_i - mu) * d_sigma, (-x_i + mu) * d_sigma,
                          config.m, config.n_beta)
    return rule.nodes, rule.weights


def pt_quadrature(p0, x, mu, sigma, config=TensorQuadratureConfig()):
    """Quadrature estimates (p_hat, grad_hat) of the smoothed density and its
    gradient at x.

    p0 must expose `dim` and `eval_unit_cube(points)` returning density
    values on a (n, D) batch inside [-1, 1]^D.  Preconditions follow the
    truncation construction: mu in [1/2, 1], x away from the cube boundary,
    and sigma small enough that sigma * tail_width <= 1/2 (which keeps every
    evaluation point strictly inside the cube; asserted below).
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    dim = p0.dim
    if dim > 3:
        raise DimensionTooLarge("tensor quadrature is limited to D <= 3")
    if x.shape != (dim,):
        raise ValueError(f"x must have shape ({dim},)")
    if not 0.5 <= mu <= 1.0:
        raise PreconditionViolated("mu must lie in [1/2, 1]")
    if not 0.0 < sigma < 1.0:
        raise PreconditionViolated("sigma must lie in (0, 1)")
    log_inv = math.log(1.0 / sigma)
    margin = log_inv ** (-config.tau_bd)
    if np.max(np.abs(x)) > mu - mu * margin:
        raise PreconditionViolated(
            "x too close to the support boundary for this (sigma, tau_bd)")
    d_sigma = tail_width(sigma, config)
    if sigma * d_sigma > 0.5:
        raise PreconditionViolated(
            "sigma too large for (tau_tail, tau_bd): sigma * tail_width > 1/2")

    axis_y, axis_a, axis_c = [], [], []
    limit = 1.0 - margin / 2.0
    for i in range(dim):
        y, v = _axis_nodes(x[i], mu, sigma, config)
        c = (x[i] + sigma * y) / mu
        # the lemma's containment guarantee must hold at every node
        assert np.max(np.abs(c)) <= limit + 1e-12, "containment violated"
        axis_y.append(y)
        axis_a.append(v * _phi(y) / mu)  # per-axis factor incl. 1/mu Jacobian
        axis_c.append(c)

    grids = np.meshgrid(*axis_c, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    vals = np.asarray(p0.eval_unit_cube(points), dtype=np.float64)
    vals = vals.reshape([config.m] * dim)

    def contract(vectors):
        out = vals
        for vec in reversed(vectors):
            out = out @ vec
        return float(out)

    p_hat = contract(axis_a)
    grad = np.empty(dim)
    for k in range(dim):
        vecs = list(axis_a)
        vecs[k] = axis_a[k] * axis_y[k]
        grad[k] = contract(vecs) / sigma
    return p_hat, grad


def convergence_rows(m_values, estimates, oracle):
    """Rows (m, p_hat, oracle, abs_err, rel_err) for a convergence study."""
    rows = []
    for m, est in zip(m_values, estimates):
        abs_err = abs(est - oracle)
        rel = abs_err / abs(oracle) if oracle != 0 else math.inf
        rows.append((int(m), float(est), float(oracle), abs_err, rel))
    return rows


def write_convergence_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("m,p_hat,oracle,abs_err,rel_err\n")
        for m, est, oracle, abs_err, rel in rows:
            fh.write(f"{m},{est!r},{oracle!r},{abs_err!r},{rel!r}\n")
