"""Compare the numba and pure-numpy kernel lanes on the hot inner loops.

Times the weight-sharing layer forward/backward pass (the training
bottleneck) and the KDE density sums, and reports the max deviation between
the two lanes.  Run:

    python benchmarks/kernel_bench.py

The package-wide lane is chosen at import time (DIFFDEN_NUMBA=0 forces the
numpy fallback); this script always times both implementations directly.
"""

import time

import numpy as np

from diffden import _accel


def timeit(fn, *args, repeat=20):
    fn(*args)  # warm-up (numba compiles here)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_layer(batch=128, width=64, replicas=4, seed=0):
    gen = np.random.default_rng(seed)
    a = gen.normal(size=(batch, width))
    w = gen.normal(size=(width, width))
    b = gen.normal(size=width)
    qidx = np.stack([gen.permutation(width) for _ in range(replicas)]).astype(np.int64)
    ridx = np.stack([gen.permutation(width) for _ in range(replicas)]).astype(np.int64)
    delta = gen.normal(size=(batch, width))

    rows = []
    fwd_np = timeit(_accel.wsnn_layer_forward_np, a, w, b, qidx, ridx)
    bwd_np = timeit(_accel.wsnn_layer_backward_np, a, w, delta, qidx, ridx)
    rows.append(("layer forward", "numpy", fwd_np, None))
    rows.append(("layer backward", "numpy", bwd_np, None))
    if _accel.NUMBA_ENABLED:
        fwd_nb = timeit(_accel.wsnn_layer_forward_nb, a, w, b, qidx, ridx)
        bwd_nb = timeit(_accel.wsnn_layer_backward_nb, a, w, delta, qidx, ridx)
        dev_f = np.max(np.abs(_accel.wsnn_layer_forward_nb(a, w, b, qidx, ridx)
                              - _accel.wsnn_layer_forward_np(a, w, b, qidx, ridx)))
        g_nb = _accel.wsnn_layer_backward_nb(a, w, delta, qidx, ridx)
        g_np = _accel.wsnn_layer_backward_np(a, w, delta, qidx, ridx)
        dev_b = max(np.max(np.abs(x - y)) for x, y in zip(g_nb, g_np))
        rows.append(("layer forward", "numba", fwd_nb, dev_f))
        rows.append(("layer backward", "numba", bwd_nb, dev_b))
    return rows


def bench_kde(n_train=2000, n_query=3000, dim=9, seed=1):
    gen = np.random.default_rng(seed)
    train = gen.normal(size=(n_train, dim))
    query = gen.normal(size=(n_query, dim))
    rows = []
    g_np = timeit(_accel.kde_gauss_logsum_np, train, query, 0.5, repeat=5)
    b_np = timeit(_accel.kde_box_count_np, train, query, 0.5, repeat=5)
    rows.append(("kde gauss logsum", "numpy", g_np, None))
    rows.append(("kde box count", "numpy", b_np, None))
    if _accel.NUMBA_ENABLED:
        g_nb = timeit(_accel.kde_gauss_logsum_nb, train, query, 0.5, repeat=5)
        b_nb = timeit(_accel.kde_box_count_nb, train, query, 0.5, repeat=5)
        dev_g = np.max(np.abs(_accel.kde_gauss_logsum_nb(train, query, 0.5)
                              - _accel.kde_gauss_logsum_np(train, query, 0.5)))
        dev_b = np.max(np.abs(_accel.kde_box_count_nb(train, query, 0.5)
                              - _accel.kde_box_count_np(train, query, 0.5)))
        rows.append(("kde gauss logsum", "numba", g_nb, dev_g))
        rows.append(("kde box count", "numba", b_nb, dev_b))
    return rows


def main():
    print(f"active lane: {_accel.lane()}")
    if not _accel.NUMBA_ENABLED:
        print("numba unavailable or disabled; timing the numpy lane only")
    all_rows = bench_layer() + bench_kde()
    print(f"{'kernel':<18} {'lane':<6} {'best (ms)':>10} {'vs numpy':>9} {'max dev':>10}")
    baselines = {}
    for name, lane, secs, dev in all_rows:
        if lane == "numpy":
            baselines[name] = secs
        speed = baselines[name] / secs if secs else float("inf")
        dev_s = f"{dev:.2e}" if dev is not None else "-"
        print(f"{name:<18} {lane:<6} {secs * 1e3:>10.3f} {speed:>8.1f}x {dev_s:>10}")


if __name__ == "__main__":
    main()
