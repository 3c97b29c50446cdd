"""Forward OU process, denoising score-matching loss, and Adam training.

The forward diffusion dX = -alpha_t X dt + sqrt(2 alpha_t) dB has Gaussian
transitions X_t | X_0 ~ N(mu_t X_0, sigma_t^2 I) with
mu_t = exp(-int_0^t alpha) and sigma_t^2 = 1 - mu_t^2.  Training regresses a
network f(x, t) onto the conditional score -(x_t - mu_t x_0) / sigma_t^2
with t drawn uniformly on [T_min, T_max] (unit loss weight).
"""

import math
import time
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import wsnn
from .errors import DimensionMismatch, EmptyDataset, NegativeTime, SingularTime
from .numerics import McEstimate, Rng


def _adaptive_simpson(f, a, b, tol):
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return (recurse(a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(m, b, fm, frm, fb, right, tol / 2.0, depth - 1))

    return recurse(a, b, fa, fm, fb, whole, tol, 48)


@dataclass(frozen=True)
class DiffusionSchedule:
    """Forward-process clock: alpha_t, its bounds, and the time window.

    alpha may be a positive constant (closed-form mu_t) or a callable, in
    which case int_0^t alpha is evaluated by adaptive quadrature to 1e-10.
    The loss weight is identically 1 on [t_min, t_max].
    """

    alpha: Union[float, Callable] = 1.0
    tau_lower: float = None
    tau_upper: float = None
    t_min: float = 1e-3
    t_max: float = 3.0

    def __post_init__(self):
        if not callable(self.alpha):
            object.__setattr__(self, "alpha", float(self.alpha))
            if self.alpha <= 0:
                raise ValueError("constant alpha must be positive")
            if self.tau_lower is None:
                object.__setattr__(self, "tau_lower", self.alpha)
            if self.tau_upper is None:
                object.__setattr__(self, "tau_upper", self.alpha)
        elif self.tau_lower is None or self.tau_upper is None:
            raise ValueError("callable alpha requires explicit tau bounds")
        if not 0 < self.t_min < self.t_max:
            raise ValueError("need 0 < t_min < t_max")

    def alpha_at(self, t):
        return self.alpha(t) if callable(self.alpha) else self.alpha

    def _integral(self, t):
        if not callable(self.alpha):
            return self.alpha * t
        return _adaptive_simpson(self.alpha, 0.0, float(t), 1e-10) if t > 0 else 0.0

    def mu_sigma(self, t):
        """(mu_t, sigma_t); accepts a scalar or an array of times."""
        t_arr = np.asarray(t, dtype=np.float64)
        if np.any(t_arr < 0):
            raise NegativeTime("t must be >= 0")
        if callable(self.alpha):
            integral = np.vectorize(self._integral)(t_arr)
        else:
            integral = self.alpha * t_arr
        mu = np.exp(-integral)
        sigma = np.sqrt(-np.expm1(-2.0 * integral))
        if np.isscalar(t) or t_arr.ndim == 0:
            return float(mu), float(sigma)
        return mu, sigma


def forward_sample(schedule, x0, t, rng):
    """Draw x_t = mu_t x0 + sigma_t z with z ~ N(0, I)."""
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    x = x0[None, :] if single else x0
    mu, sigma = schedule.mu_sigma(t)
    mu = np.broadcast_to(np.asarray(mu), (x.shape[0],))
    sigma = np.broadcast_to(np.asarray(sigma), (x.shape[0],))
    z = rng.standard_normal(x.size).reshape(x.shape)
    xt = mu[:, None] * x + sigma[:, None] * z
    return xt[0] if single else xt


def conditional_score(schedule, x0, x_t, t):
    """Score of the Gaussian transition: -(x_t - mu_t x0) / sigma_t^2."""
    x0 = np.asarray(x0, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    mu, sigma = schedule.mu_sigma(t)
    if np.any(np.asarray(sigma) == 0.0):
        raise SingularTime("conditional score undefined at sigma_t = 0")
    if x0.ndim == 1:
        return -(x_t - mu * x0) / sigma ** 2
    mu = np.broadcast_to(np.asarray(mu), (x0.shape[0],))[:, None]
    sigma = np.broadcast_to(np.asarray(sigma), (x0.shape[0],))[:, None]
    return -(x_t - mu * x0) / sigma ** 2


def time_input(x, t, schedule=None, extra=False):
    """Network input: concat(x, t), width D + 1.

    With extra=True the columns (t, sigma_t, 1/sigma_t) are appended instead
    (width D + 3); off by default to keep the plain (x, t) parameterisation.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    t_col = np.broadcast_to(np.asarray(t, dtype=np.float64), (xb.shape[0],))
    if extra:
        if schedule is None:
            raise ValueError("extra time features need the schedule")
        _, sigma = schedule.mu_sigma(t_col)
        cols = np.stack([t_col, sigma, 1.0 / sigma], axis=1)
    else:
        cols = t_col[:, None]
    out = np.concatenate([xb, cols], axis=1)
    return out[0] if single else out


def network_score(arch, params, schedule=None, extra=False):
    """Score callable (x, t) -> f(concat(x, t)) backed by a network."""
    expected = arch.input_dim - (3 if extra else 1)
    if arch.output_dim != expected:
        raise DimensionMismatch(
            "score network width mismatch for the chosen time features")

    def score(x, t):
        return wsnn.forward(arch, params, time_input(x, t, schedule, extra))

    return score


def dsm_loss(arch, params, schedule, x0, x_t, t):
    """Denoising loss |f(x_t, t) + (x_t - mu_t x0) / sigma_t^2|^2,
    averaged over the batch when inputs are batched."""
    f = wsnn.forward(arch, params, time_input(x_t, t))
    resid = f - conditional_score(schedule, x0, x_t, t)
    return float(np.mean(np.sum(np.atleast_2d(resid) ** 2, axis=1)))


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    steps: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    clip_to_bound: bool = False
    epoch_len: int = None  # trace bucket size; defaults to max(1, n // batch)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


class AdamState:
    """First/second-moment accumulators, one pair per parameter array."""

    def __init__(self, params):
        self.m = [np.zeros_like(a) for a in params.weights + params.biases]
        self.v = [np.zeros_like(a) for a in params.weights + params.biases]
        self.t = 0

    def step(self, params, grads, config):
        self.t += 1
        lr, b1, b2, eps = (config.learning_rate, config.beta1,
                           config.beta2, config.eps)
        arrays = params.weights + params.biases
        gs = grads.weights + grads.biases
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for a, g, m, v in zip(arrays, gs, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            a -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _canonical_order(batch):
    # lexicographic row order makes full-batch training invariant to
    # permutations of the dataset
    return batch[np.lexsort(batch.T[::-1])]


@dataclass
class TraceRow:
    epoch: int
    mean_loss: float
    score_mse: float  # nan when not probed
    wall_time_s: float


def write_trace_csv(path, trace):
    with open(path, "w") as fh:
        fh.write("epoch,mean_loss,score_mse,wall_time_s\n")
        for row in trace:
            sm = "" if math.isnan(row.score_mse) else repr(row.score_mse)
            fh.write(f"{row.epoch},{row.mean_loss!r},{sm},{row.wall_time_s!r}\n")


def train(dataset, arch, init_params, schedule, config, score_probe=None):
    """Stochastic denoising score matching with Adam.

    Per step: draw a minibatch, draw t ~ Uniform[t_min, t_max] and the
    forward noise independently per element, and descend the mean denoising
    loss.  All randomness derives from config.seed, so runs are repeatable.
    score_probe, when given as (density, n_mc), records a score-MSE estimate
    once per trace epoch.

    Returns (trained params, list of TraceRow).
    """
    x_data = dataset.x if hasattr(dataset, "x") else np.atleast_2d(np.asarray(dataset))
    n, dim = x_data.shape
    if n < 1:
        raise EmptyDataset("train requires a nonempty dataset")
    if dim + 1 != arch.input_dim:
        raise DimensionMismatch(
            f"dataset dim {dim} needs input width {dim + 1}, arch has {arch.input_dim}")
    if arch.output_dim != dim:
        raise DimensionMismatch("network output width must equal the data dimension")

    params = init_params.copy()
    wsnn.apply_masks(params, arch)
    adam = AdamState(params)
    root = Rng(config.seed)
    epoch_len = config.epoch_len or max(1, n // config.batch_size)
    full_batch = config.batch_size >= n

    trace = []
    bucket = []
    t0 = time.perf_counter()
    for step in range(config.steps):
        rs = root.child(1, step)
        if full_batch:
            batch = x_data
        else:
            idx = rs.integers(0, n, config.batch_size)
            batch = x_data[idx]
        batch = _canonical_order(batch)
        b = batch.shape[0]

        t = rs.uniform(b, schedule.t_min, schedule.t_max)
        mu, sigma = schedule.mu_sigma(t)
        z = rs.standard_normal(b * dim).reshape(b, dim)
        x_t = mu[:, None] * batch + sigma[:, None] * z

        net_in = time_input(x_t, t)
        f = wsnn.forward(arch, params, net_in)
        resid = f + (x_t - mu[:, None] * batch) / (sigma ** 2)[:, None]
        loss = float(np.mean(np.sum(resid ** 2, axis=1)))
        grads, _ = wsnn.backward(arch, params, net_in, 2.0 * resid / b)
        adam.step(params, grads, config)
        if config.clip_to_bound and arch.weight_bound > 0:
            params = wsnn.project_params(params, arch.weight_bound)
        wsnn.apply_masks(params, arch)

        bucket.append(loss)
        if (step + 1) % epoch_len == 0 or step + 1 == config.steps:
            sm = math.nan
            if score_probe is not None:
                density, n_mc = score_probe
                est = score_mse(network_score(arch, params), density, schedule,
                                n_mc, root.child(2, step))
                sm = est.value
            trace.append(TraceRow(len(trace) + 1, float(np.mean(bucket)), sm,
                                  time.perf_counter() - t0))
            bucket = []
    return params, trace


def score_mse(score, density, schedule, n_mc, rng):
    """Monte Carlo estimate of the time-integrated squared score error

        int_Tmin^Tmax E |score(X_t, t) - grad log p_t(X_t)|^2 dt

    for a density with an analytic noised score.  Returns an McEstimate."""
    r_t, r_x0, r_z = rng.split(3)
    t = r_t.uniform(n_mc, schedule.t_min, schedule.t_max)
    x0 = density.sample(n_mc, r_x0).x
    mu, sigma = schedule.mu_sigma(t)
    z = r_z.standard_normal(n_mc * density.dim).reshape(n_mc, density.dim)
    x_t = mu[:, None] * x0 + sigma[:, None] * z

    f_hat = np.atleast_2d(score(x_t, t))
    f_true = score_t_batch(density, x_t, t, schedule)
    vals = (schedule.t_max - schedule.t_min) * np.sum((f_hat - f_true) ** 2, axis=1)
    se = float(np.std(vals, ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else math.inf
    return McEstimate(float(np.mean(vals)), se, n_mc)


def score_t_batch(density, x, t, schedule):
    """Analytic noised score for per-element times (loops where needed)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0 or getattr(density, "time_invariant_score", False):
        return density.score_t(x, float(t.ravel()[0]), schedule)
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = density.score_t(x[i:i + 1], float(t[i]), schedule)[0]
    return out
