"""Weight-sharing ReLU networks.

A network of depth L maps d_1 -> d_{L+1} through L-1 hidden layers of the
form

    f_i(v) = relu( sum_j R_i^(j) (W_i Q_i^(j) v + b_i) ),

followed by an affine output layer.  Q_i^(j) / R_i^(j) are permutations, so
one weight block W_i is shared across all replicas of a layer; with a single
identity replica per layer the class reduces to a plain MLP.  Permutations
are stored as index arrays and applied as gathers, never as dense matrices,
except in the materialisation helpers used as test oracles.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import DimensionMismatch, InvalidSize


@dataclass(frozen=True)
class Permutation:
    """Bijection on {0..n-1}; applying to v gives v[idx]."""

    idx: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.idx, dtype=np.int64)
        object.__setattr__(self, "idx", idx)
        if idx.ndim != 1 or not np.array_equal(np.sort(idx), np.arange(idx.size)):
            raise InvalidSize("permutation must be a bijection on 0..n-1")

    @property
    def size(self):
        return self.idx.size

    def apply(self, v):
        return np.asarray(v)[..., self.idx]

    def inverse(self):
        return Permutation(np.argsort(self.idx))

    def as_matrix(self):
        mat = np.zeros((self.size, self.size))
        mat[np.arange(self.size), self.idx] = 1.0
        return mat

    @staticmethod
    def identity(n):
        return Permutation(np.arange(n, dtype=np.int64))


@dataclass(frozen=True)
class WsnnArchitecture:
    """Network class parameters (depth, widths, replicas, permutations, s, M)."""

    widths: tuple
    replicas: tuple
    q_perms: tuple  # per hidden layer: tuple of m_i Permutations of size d_i
    r_perms: tuple  # per hidden layer: tuple of m_i Permutations of size d_{i+1}
    sparsity: int = 0
    weight_bound: float = 0.0
    weight_masks: tuple = None  # optional per-layer 0/1 arrays, None = dense
    _qidx: tuple = field(init=False, repr=False, default=None)
    _ridx: tuple = field(init=False, repr=False, default=None)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        replicas = tuple(int(m) for m in self.replicas)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "replicas", replicas)
        if len(widths) < 3:
            raise InvalidSize("depth must be at least 2 (widths needs >= 3 entries)")
        if len(replicas) != self.depth - 1:
            raise InvalidSize("need one replica count per hidden layer")
        if len(self.q_perms) != self.depth - 1 or len(self.r_perms) != self.depth - 1:
            raise InvalidSize("need one permutation set per hidden layer")
        for i, m in enumerate(replicas):
            if m < 1 or len(self.q_perms[i]) != m or len(self.r_perms[i]) != m:
                raise InvalidSize(f"layer {i}: |Q|=|R|={m} permutations required")
            for q in self.q_perms[i]:
                if q.size != widths[i]:
                    raise InvalidSize(f"layer {i}: Q permutations must have size {widths[i]}")
            for r in self.r_perms[i]:
                if r.size != widths[i + 1]:
                    raise InvalidSize(f"layer {i}: R permutations must have size {widths[i + 1]}")
        object.__setattr__(
            self, "_qidx",
            tuple(np.stack([q.idx for q in qs]) for qs in self.q_perms))
        object.__setattr__(
            self, "_ridx",
            tuple(np.stack([r.idx for r in rs]) for rs in self.r_perms))

    @property
    def depth(self):
        return len(self.widths) - 1

    @property
    def input_dim(self):
        return self.widths[0]

    @property
    def output_dim(self):
        return self.widths[-1]

    def layer_shape(self, i):
        return self.widths[i + 1], self.widths[i]


def mlp(widths, sparsity=0, weight_bound=0.0):
    """Plain sparse-MLP special case: one identity replica per hidden layer."""
    widths = tuple(int(w) for w in widths)
    n_hidden = len(widths) - 2
    q = tuple((Permutation.identity(widths[i]),) for i in range(n_hidden))
    r = tuple((Permutation.identity(widths[i + 1]),) for i in range(n_hidden))
    return WsnnArchitecture(widths, (1,) * n_hidden, q, r, sparsity, weight_bound)


@dataclass
class WsnnParams:
    weights: list  # W_i of shape (d_{i+1}, d_i)
    biases: list   # b_i of shape (d_{i+1},)

    def copy(self):
        return WsnnParams([w.copy() for w in self.weights],
                          [b.copy() for b in self.biases])

    def flatten(self):
        return np.concatenate([w.ravel() for w in self.weights]
                              + [b.ravel() for b in self.biases])


def init_params(arch, rng):
    """He-style fan-in initialisation, deterministic per rng stream."""
    weights, biases = [], []
    for i in range(arch.depth):
        dout, din = arch.layer_shape(i)
        scale = math.sqrt(2.0 / din)
        weights.append(scale * rng.normal_matrix(dout, din))
        biases.append(np.zeros(dout))
    params = WsnnParams(weights, biases)
    apply_masks(params, arch)
    return params


def zero_params(arch):
    return WsnnParams(
        [np.zeros(arch.layer_shape(i)) for i in range(arch.depth)],
        [np.zeros(arch.widths[i + 1]) for i in range(arch.depth)])


def apply_masks(params, arch):
    if arch.weight_masks is not None:
        for w, m in zip(params.weights, arch.weight_masks):
            if m is not None:
                w *= m
    return params


def params_nnz(params):
    return int(sum(np.count_nonzero(w) for w in params.weights)
               + sum(np.count_nonzero(b) for b in params.biases))


def params_max_abs(params):
    return max(float(np.max(np.abs(a))) if a.size else 0.0
               for a in params.weights + params.biases)


def project_params(params, bound):
    """Clip every entry into [-bound, bound]; idempotent."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    return WsnnParams([np.clip(w, -bound, bound) for w in params.weights],
                      [np.clip(b, -bound, bound) for b in params.biases])


def _as_batch(x, width):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise DimensionMismatch(f"input width {x.shape[-1]} != d_1 = {width}")
    return x, single


def _check_params(arch, params):
    if len(params.weights) != arch.depth or len(params.biases) != arch.depth:
        raise DimensionMismatch("params depth does not match architecture")
    for i in range(arch.depth):
        if params.weights[i].shape != arch.layer_shape(i):
            raise DimensionMismatch(f"W_{i + 1} shape {params.weights[i].shape} "
                                    f"!= {arch.layer_shape(i)}")


def forward(arch, params, x):
    """Evaluate the network; accepts a single vector or a (B, d_1) batch."""
    _check_params(arch, params)
    a, single = _as_batch(x, arch.input_dim)
    for i in range(arch.depth - 1):
        z = _accel.wsnn_layer_forward(a, params.weights[i], params.biases[i],
                                      arch._qidx[i], arch._ridx[i])
        a = np.maximum(z, 0.0)
    out = a @ params.weights[-1].T + params.biases[-1]
    return out[0] if single else out


def _forward_cache(arch, params, a):
    acts = [a]
    pres = []
    for i in range(arch.depth - 1):
        z = _accel.wsnn_layer_forward(a, params.weights[i], params.biases[i],
                                      arch._qidx[i], arch._ridx[i])
        pres.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    out = a @ params.weights[-1].T + params.biases[-1]
    return out, acts, pres


def backward(arch, params, x, grad_output):
    """Reverse-mode gradients of sum(grad_output * forward(x)).

    Shared-weight gradients accumulate over all replicas of a layer.
    Returns (WsnnParams of gradients, gradient w.r.t. x).  ReLU derivative
    at exactly 0 is taken as 0.
    """
    _check_params(arch, params)
    a, single = _as_batch(x, arch.input_dim)
    g, gsingle = _as_batch(grad_output, arch.output_dim)
    if g.shape[0] != a.shape[0]:
        raise DimensionMismatch("grad_output batch size does not match input")
    _, acts, pres = _forward_cache(arch, params, a)

    grads = zero_params(arch)
    grads.weights[-1] = g.T @ acts[-1]
    grads.biases[-1] = g.sum(axis=0)
    delta = g @ params.weights[-1]
    for i in range(arch.depth - 2, -1, -1):
        delta = delta * (pres[i] > 0.0)
        dW, db, delta = _accel.wsnn_layer_backward(
            acts[i], params.weights[i], delta, arch._qidx[i], arch._ridx[i])
        grads.weights[i] = dW
        grads.biases[i] = db
    if arch.weight_masks is not None:
        apply_masks(grads, arch)
    return grads, (delta[0] if single else delta)


def materialize_layer(arch, params, i):
    """Dense replica-sum matrix of hidden layer i (test oracle).

    Replica j routes input coordinate q.idx[d] into weight column d and
    weight row k onto output coordinate r.idx[k], so its dense block is
    W[inv(r)][:, inv(q)]; the layer matrix is the sum over replicas.
    """
    W = params.weights[i]
    out = np.zeros_like(W)
    for q, r in zip(arch.q_perms[i], arch.r_perms[i]):
        out += W[np.argsort(r.idx)][:, np.argsort(q.idx)]
    return out


def materialize_bias(arch, params, i):
    b = params.biases[i]
    out = np.zeros_like(b)
    for r in arch.r_perms[i]:
        out += b[np.argsort(r.idx)]
    return out


def effective_layers(arch, params):
    """All layers as plain (A_i, b_i) affine maps, replica sums materialised."""
    mats = [materialize_layer(arch, params, i) for i in range(arch.depth - 1)]
    mats.append(params.weights[-1])
    bs = [materialize_bias(arch, params, i) for i in range(arch.depth - 1)]
    bs.append(params.biases[-1])
    return mats, bs


# --- convolution as a weight-sharing layer ---------------------------------


@dataclass(frozen=True)
class ConvAsWsnn:
    input_side: int
    filter_side: int
    d_in: int
    d_out: int
    m: int
    q_perms: tuple
    r_perms: tuple

    def place_filter(self, filter_vec):
        """Sparse shared-weight template: filter in row 0, zeros elsewhere."""
        w = np.asarray(filter_vec, dtype=np.float64).ravel()
        if w.size != self.filter_side ** 2:
            raise InvalidSize("filter length must be filter_side**2")
        W = np.zeros((self.d_out, self.d_in))
        W[0, :w.size] = w
        return W

    def materialize(self, filter_vec):
        W = self.place_filter(filter_vec)
        out = np.zeros_like(W)
        for q, r in zip(self.q_perms, self.r_perms):
            out += W[np.argsort(r.idx)][:, np.argsort(q.idx)]
        return out


def conv_as_wsnn(input_side, filter_side):
    """Permutation pairs realising a valid 2-D convolution as one shared block.

    Output j (at grid position (r, c)) reads its input window through Q^(j)
    so that row 0 of the template hits the window pixels, and R^(j) swaps
    rows 0 and j so each replica lands on its own output coordinate:
    sum_j R^(j) W Q^(j) equals the valid-convolution matrix.
    """
    if filter_side < 1 or input_side < 1 or filter_side > input_side:
        raise InvalidSize("need 1 <= filter_side <= input_side")
    out_side = input_side - filter_side + 1
    d_in = input_side ** 2
    d_out = out_side ** 2
    s = filter_side ** 2
    q_perms, r_perms = [], []
    for j in range(d_out):
        r, c = divmod(j, out_side)
        window = [(r + fr) * input_side + (c + fc)
                  for fr in range(filter_side) for fc in range(filter_side)]
        rest = sorted(set(range(d_in)) - set(window))
        q_perms.append(Permutation(np.array(window + rest, dtype=np.int64)))
        ridx = np.arange(d_out, dtype=np.int64)
        ridx[0], ridx[j] = j, 0
        r_perms.append(Permutation(ridx))
    return ConvAsWsnn(input_side, filter_side, d_in, d_out, d_out,
                      tuple(q_perms), tuple(r_perms))


def conv2d_valid(image, filt):
    """Direct sliding-window valid convolution (oracle for conv_as_wsnn)."""
    image = np.asarray(image, dtype=np.float64)
    filt = np.asarray(filt, dtype=np.float64)
    I, F = image.shape[0], filt.shape[0]
    out = np.empty((I - F + 1, I - F + 1))
    for r in range(out.shape[0]):
        for c in range(out.shape[1]):
            out[r, c] = np.sum(image[r:r + F, c:c + F] * filt)
    return out


def linear_network(weight, bias=None):
    """Exact ReLU realisation of x -> W x + b via the split
    W x + b = relu(W x + b) - relu(-W x - b).

    Returns (arch, params) of a depth-2 network computing the affine map
    everywhere (useful for injecting fixed linear scores into losses).
    """
    weight = np.atleast_2d(np.asarray(weight, dtype=np.float64))
    dout, din = weight.shape
    bias = np.zeros(dout) if bias is None else np.asarray(bias, dtype=np.float64)
    arch = mlp((din, 2 * dout, dout))
    w1 = np.vstack([weight, -weight])
    b1 = np.concatenate([bias, -bias])
    w2 = np.hstack([np.eye(dout), -np.eye(dout)])
    params = WsnnParams([w1, w2], [b1, np.zeros(dout)])
    return arch, params


# --- complexity diagnostics -------------------------------------------------


def covering_bound_numerator(arch, box_half_width):
    """4 L^2 |d|^2 (|m| |d| (M v 1))^L (L + C + 2), the log-covering numerator."""
    L = arch.depth
    d_inf = max(arch.widths)
    m_inf = max(arch.replicas) if arch.replicas else 1
    m_or_one = max(arch.weight_bound, 1.0)
    return (4.0 * L ** 2 * d_inf ** 2 * (m_inf * d_inf * m_or_one) ** L
            * (L + box_half_width + 2.0))


def covering_log_bound(arch, box_half_width, delta):
    """(s+1) log(numerator / delta): metric-entropy bound of the class."""
    if delta <= 0 or box_half_width <= 0:
        raise ValueError("delta and box_half_width must be positive")
    num = covering_bound_numerator(arch, box_half_width)
    return (arch.sparsity + 1) * (math.log(num) - math.log(delta))


# --- checkpoint io ----------------------------------------------------------

_MAGIC = b"DDWSNN1\n"


def save_checkpoint(path, arch, params):
    """Binary container: header (L, d, m, s, M, perm tables, masks) then
    row-major W_i and b_i in layer order.  Field order is documented in the
    README."""
    _check_params(arch, params)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        np.array([arch.depth], dtype=np.int64).tofile(fh)
        np.array(arch.widths, dtype=np.int64).tofile(fh)
        np.array(arch.replicas, dtype=np.int64).tofile(fh)
        np.array([arch.sparsity], dtype=np.int64).tofile(fh)
        np.array([arch.weight_bound], dtype=np.float64).tofile(fh)
        for i in range(arch.depth - 1):
            for q in arch.q_perms[i]:
                q.idx.astype(np.int64).tofile(fh)
            for r in arch.r_perms[i]:
                r.idx.astype(np.int64).tofile(fh)
        has_masks = arch.weight_masks is not None
        np.array([1 if has_masks else 0], dtype=np.int64).tofile(fh)
        if has_masks:
            for i in range(arch.depth):
                np.ascontiguousarray(arch.weight_masks[i], dtype=np.uint8).tofile(fh)
        for w, b in zip(params.weights, params.biases):
            np.ascontiguousarray(w, dtype=np.float64).tofile(fh)
            np.ascontiguousarray(b, dtype=np.float64).tofile(fh)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a network checkpoint file")
        depth = int(np.fromfile(fh, np.int64, 1)[0])
        widths = tuple(np.fromfile(fh, np.int64, depth + 1).tolist())
        replicas = tuple(np.fromfile(fh, np.int64, depth - 1).tolist())
        sparsity = int(np.fromfile(fh, np.int64, 1)[0])
        bound = float(np.fromfile(fh, np.float64, 1)[0])
        q_perms, r_perms = [], []
        for i in range(depth - 1):
            qs = tuple(Permutation(np.fromfile(fh, np.int64, widths[i]))
                       for _ in range(replicas[i]))
            rs = tuple(Permutation(np.fromfile(fh, np.int64, widths[i + 1]))
                       for _ in range(replicas[i]))
            q_perms.append(qs)
            r_perms.append(rs)
        masks = None
        if int(np.fromfile(fh, np.int64, 1)[0]):
            masks = tuple(
                np.fromfile(fh, np.uint8, widths[i + 1] * widths[i])
                .reshape(widths[i + 1], widths[i]).astype(np.float64)
                for i in range(depth))
        arch = WsnnArchitecture(widths, replicas, tuple(q_perms), tuple(r_perms),
                                sparsity, bound, masks)
        weights, biases = [], []
        for i in range(depth):
            dout, din = arch.layer_shape(i)
            weights.append(np.fromfile(fh, np.float64, dout * din).reshape(dout, din))
            biases.append(np.fromfile(fh, np.float64, dout))
    return arch, WsnnParams(weights, biases)
