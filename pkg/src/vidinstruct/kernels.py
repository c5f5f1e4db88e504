"""Hot numeric kernels: pooling, affine maps, histograms, farthest-point selection.

Every kernel has a pure-numpy implementation and, when numba is importable, a
compiled twin. Set VIDINSTRUCT_DISABLE_NUMBA=1 to force the numpy path (useful
on platforms without a working JIT and for A/B benchmarking; see
benchmarks/bench_kernels.py). The active backend is chosen once at import.

All kernels expect C-contiguous float64 arrays unless noted; callers convert.
"""

import os

import numpy as np

DISABLE_ENV = "VIDINSTRUCT_DISABLE_NUMBA"


def _numba_requested() -> bool:
    flag = os.environ.get(DISABLE_ENV, "").strip().lower()
    if flag in ("1", "true", "yes", "on"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _numba_requested()


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def temporal_mean_numpy(x):
    """(T, N, D) -> (N, D), mean over frames.

    Addends are sorted before accumulation so the result is bit-identical
    under any permutation of frames (float addition is not associative).
    """
    return np.sort(x, axis=0).sum(axis=0, dtype=np.float64) / x.shape[0]


def spatial_mean_numpy(x):
    """(T, N, D) -> (T, D), mean over tokens, sorted accumulation as above."""
    return np.sort(x, axis=1).sum(axis=1, dtype=np.float64) / x.shape[1]


def affine_numpy(v, w, b):
    """(R, D) @ (D, K) + (K,) -> (R, K)."""
    return v @ w + b


def affine_backward_numpy(v, w, upstream):
    """Gradients of sum(upstream * (v @ w + b)) w.r.t. v, w, b."""
    return upstream @ w.T, v.T @ upstream, upstream.sum(axis=0)


def pool_grad_scatter_numpy(grad_temporal, grad_spatial):
    """Distribute pooled-feature gradients back onto the (T, N, D) tensor.

    Each input cell feeds both poolings: it receives 1/T of its temporal-row
    gradient and 1/N of its spatial-row gradient.
    """
    n = grad_temporal.shape[0]
    t = grad_spatial.shape[0]
    return grad_temporal[None, :, :] / t + grad_spatial[:, None, :] / n


def channel_histograms_numpy(img, bins):
    """Per-channel intensity histogram of a (H, W, C) uint8 image.

    Returns a float64 vector of length C*bins; each channel block sums to 1.
    """
    h, w, c = img.shape
    out = np.empty(c * bins, dtype=np.float64)
    flat = img.reshape(-1, c).astype(np.int64)
    for ch in range(c):
        idx = (flat[:, ch] * bins) >> 8
        out[ch * bins:(ch + 1) * bins] = np.bincount(idx, minlength=bins)
    out /= float(h * w)
    return out


def l1_distance_numpy(a, b):
    return float(np.abs(a - b).sum())


def farthest_point_numpy(signatures, k):
    """Greedy farthest-point selection over (F, B) signatures with L1 distance.

    Seeds with index 0, then repeatedly adds the frame with the largest minimum
    distance to the already-selected set. Ties break toward the lowest index;
    stops early once every remaining distance is zero. Returns indices in
    selection order.
    """
    f = signatures.shape[0]
    selected = np.empty(min(k, f), dtype=np.int64)
    selected[0] = 0
    count = 1
    min_dist = np.abs(signatures - signatures[0]).sum(axis=1)
    while count < min(k, f):
        best = int(np.argmax(min_dist))
        if min_dist[best] <= 0.0:
            break
        selected[count] = best
        count += 1
        np.minimum(min_dist, np.abs(signatures - signatures[best]).sum(axis=1),
                   out=min_dist)
    return selected[:count]


# ---------------------------------------------------------------------------
# numba twins (explicit loops; compiled lazily on first call, cached on disk)
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:
    from numba import njit

    _jit = njit(cache=True, nogil=True)

    @_jit
    def _temporal_mean_nb(x):
        # gather per-token panels first so the per-cell sort reads cached rows
        t, n, d = x.shape
        out = np.empty((n, d))
        panel = np.empty((t, d))
        buf = np.empty(t)
        for j in range(n):
            for i in range(t):
                panel[i, :] = x[i, j, :]
            for c in range(d):
                for i in range(t):
                    buf[i] = panel[i, c]
                buf.sort()  # order-canonical accumulation, see numpy twin
                acc = 0.0
                for i in range(t):
                    acc += buf[i]
                out[j, c] = acc / t
        return out

    @_jit
    def _spatial_mean_nb(x):
        t, n, d = x.shape
        out = np.empty((t, d))
        buf = np.empty(n)
        for i in range(t):
            frame = x[i]  # contiguous (n, d) panel
            for c in range(d):
                for j in range(n):
                    buf[j] = frame[j, c]
                buf.sort()
                acc = 0.0
                for j in range(n):
                    acc += buf[j]
                out[i, c] = acc / n
        return out

    @_jit
    def _affine_nb(v, w, b):
        out = np.dot(v, w)
        for i in range(out.shape[0]):
            for j in range(out.shape[1]):
                out[i, j] += b[j]
        return out

    @_jit
    def _affine_backward_nb(v, w, upstream):
        grad_v = np.dot(upstream, w.T)
        grad_w = np.dot(v.T, upstream)
        grad_b = np.zeros(upstream.shape[1])
        for i in range(upstream.shape[0]):
            for j in range(upstream.shape[1]):
                grad_b[j] += upstream[i, j]
        return grad_v, grad_w, grad_b

    @_jit
    def _pool_grad_scatter_nb(grad_temporal, grad_spatial):
        n, d = grad_temporal.shape
        t = grad_spatial.shape[0]
        out = np.empty((t, n, d))
        for i in range(t):
            for j in range(n):
                for c in range(d):
                    out[i, j, c] = grad_temporal[j, c] / t + grad_spatial[i, c] / n
        return out

    @_jit
    def _channel_histograms_nb(img, bins):
        h, w, c = img.shape
        out = np.zeros(c * bins)
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    idx = (int(img[i, j, ch]) * bins) >> 8
                    out[ch * bins + idx] += 1.0
        return out / (h * w)

    @_jit
    def _l1_distance_nb(a, b):
        total = 0.0
        for i in range(a.shape[0]):
            total += abs(a[i] - b[i])
        return total

    @_jit
    def _farthest_point_nb(signatures, k):
        f, nbins = signatures.shape
        limit = min(k, f)
        selected = np.empty(limit, dtype=np.int64)
        selected[0] = 0
        count = 1
        min_dist = np.empty(f)
        for i in range(f):
            dist = 0.0
            for j in range(nbins):
                dist += abs(signatures[i, j] - signatures[0, j])
            min_dist[i] = dist
        while count < limit:
            best = 0
            best_val = min_dist[0]
            for i in range(1, f):
                if min_dist[i] > best_val:
                    best_val = min_dist[i]
                    best = i
            if best_val <= 0.0:
                break
            selected[count] = best
            count += 1
            for i in range(f):
                dist = 0.0
                for j in range(nbins):
                    dist += abs(signatures[i, j] - signatures[best, j])
                if dist < min_dist[i]:
                    min_dist[i] = dist
        return selected[:count]

    # Pooling stays on the numpy path even when numba is active: the sorted
    # accumulation is dominated by np.sort's optimized column kernels, which
    # beat the compiled per-cell sort ~4x at production dims (see
    # benchmarks/bench_kernels.py, where both twins are still compared).
    temporal_mean = temporal_mean_numpy
    spatial_mean = spatial_mean_numpy
    affine = _affine_nb
    affine_backward = _affine_backward_nb
    pool_grad_scatter = _pool_grad_scatter_nb
    channel_histograms = _channel_histograms_nb
    l1_distance = _l1_distance_nb
    farthest_point = _farthest_point_nb
else:
    temporal_mean = temporal_mean_numpy
    spatial_mean = spatial_mean_numpy
    affine = affine_numpy
    affine_backward = affine_backward_numpy
    pool_grad_scatter = pool_grad_scatter_numpy
    channel_histograms = channel_histograms_numpy
    l1_distance = l1_distance_numpy
    farthest_point = farthest_point_numpy


def backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


def numba_twins() -> dict:
    """Compiled twin of every kernel, for benchmarks and parity tests."""
    if not NUMBA_ENABLED:
        return {}
    return {"temporal_mean": _temporal_mean_nb, "spatial_mean": _spatial_mean_nb,
            "affine": _affine_nb, "affine_backward": _affine_backward_nb,
            "pool_grad_scatter": _pool_grad_scatter_nb,
            "channel_histograms": _channel_histograms_nb,
            "l1_distance": _l1_distance_nb, "farthest_point": _farthest_point_nb}


def warmup():
    """Trigger JIT compilation on tiny inputs so later calls run at full speed."""
    x = np.ones((2, 3, 4))
    w = np.ones((4, 2))
    b = np.zeros(2)
    v = np.ones((5, 4))
    img = np.zeros((4, 4, 3), dtype=np.uint8)
    sig = channel_histograms_numpy(img, 32)
    for call in (lambda k: k["temporal_mean"](x),
                 lambda k: k["spatial_mean"](x),
                 lambda k: k["affine"](v, w, b),
                 lambda k: k["affine_backward"](v, w, np.ones((5, 2))),
                 lambda k: k["pool_grad_scatter"](np.ones((3, 4)), np.ones((2, 4))),
                 lambda k: k["channel_histograms"](img, 32),
                 lambda k: k["l1_distance"](sig, sig),
                 lambda k: k["farthest_point"](np.vstack([sig, sig + 0.5]), 2)):
        twins = numba_twins()
        if twins:
            call(twins)
    affine(v, w, b)
    channel_histograms(img, 32)
