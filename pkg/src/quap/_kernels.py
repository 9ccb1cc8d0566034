"""Inner loops that dominate attack and audit runtime.

Every kernel exists twice: a numba ``@njit`` version and a plain numpy
version with identical semantics. The numba path is used when numba
imports and the environment variable ``QUAP_DISABLE_NUMBA`` is unset (or
``0``); set ``QUAP_DISABLE_NUMBA=1`` to force the numpy path. The public
wrappers at the bottom of the module validate and coerce arguments, then
dispatch.

Run ``python benchmarks/bench_kernels.py`` to compare the two paths.
"""

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is the optional 'fast' extra
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda func: func


def _env_disables_numba():
    return os.environ.get("QUAP_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = NUMBA_AVAILABLE and not _env_disables_numba()


def backend():
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# perturb + clip
# ---------------------------------------------------------------------------


@njit(cache=True)
def _perturb_clip_numba(images, tiles):
    n, h, w, c = images.shape
    l0 = tiles.shape[1]
    l1 = tiles.shape[2]
    shared = tiles.shape[0] == 1
    out = np.empty((n, h, w, c), dtype=np.float64)
    dist = np.zeros(n, dtype=np.float64)
    for b in range(n):
        t = 0 if shared else b
        m = 0.0
        for i in range(h):
            ti = i % l0
            for j in range(w):
                tj = j % l1
                for k in range(c):
                    x = images[b, i, j, k]
                    v = x + tiles[t, ti, tj, k]
                    if v < 0.0:
                        v = 0.0
                    elif v > 1.0:
                        v = 1.0
                    out[b, i, j, k] = v
                    d = abs(v - x)
                    if d > m:
                        m = d
        dist[b] = m
    return out, dist


def _perturb_clip_numpy(images, tiles):
    n, h, w, _ = images.shape
    l0, l1 = tiles.shape[1], tiles.shape[2]
    rows = np.arange(h) % l0
    cols = np.arange(w) % l1
    expanded = tiles[:, rows[:, None], cols[None, :], :]
    out = np.clip(images + expanded, 0.0, 1.0)
    dist = np.abs(out - images).reshape(n, -1).max(axis=1)
    return out, dist


# ---------------------------------------------------------------------------
# pairwise l-infinity scan
# ---------------------------------------------------------------------------


@njit(cache=True)
def _pairwise_linf_numba(x, threshold, capacity):
    n, d = x.shape
    best = np.inf
    bi = -1
    bj = -1
    flagged = np.empty((capacity, 2), dtype=np.int64)
    nflag = 0
    for i in range(n):
        for j in range(i + 1, n):
            # stop once the pair is provably neither the closest nor flagged
            cutoff = best if best > threshold else threshold
            m = 0.0
            for k in range(d):
                diff = abs(x[i, k] - x[j, k])
                if diff > m:
                    m = diff
                    if m >= cutoff:
                        break
            if m < best:
                best = m
                bi = i
                bj = j
            if m < threshold:
                if nflag < capacity:
                    flagged[nflag, 0] = i
                    flagged[nflag, 1] = j
                nflag += 1
    return best, bi, bj, flagged, nflag


def _pairwise_linf_numpy(x, threshold, capacity):
    n = x.shape[0]
    best, bi, bj = np.inf, -1, -1
    flagged = np.empty((capacity, 2), dtype=np.int64)
    nflag = 0
    for i in range(n - 1):
        dists = np.abs(x[i + 1:] - x[i]).max(axis=1)
        k = int(np.argmin(dists))
        if dists[k] < best:
            best, bi, bj = float(dists[k]), i, i + 1 + k
        close = np.flatnonzero(dists < threshold)
        for k in close:
            if nflag < capacity:
                flagged[nflag] = (i, i + 1 + k)
            nflag += 1
    return best, bi, bj, flagged, nflag


# ---------------------------------------------------------------------------
# exhaustive sign-pattern scan for affine classifiers
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sign_scan_numba(base_logits, contrib, labels, target):
    n, m, _, k = contrib.shape
    npat = 1 << m
    logits = base_logits.copy()
    for b in range(n):
        for q in range(m):
            for c in range(k):
                logits[b, c] += contrib[b, q, 0, c]
    counts = np.zeros(npat, dtype=np.int64)
    pattern = 0
    for step in range(npat):
        if step > 0:
            q = 0
            while not (step >> q) & 1:
                q += 1
            old = (pattern >> q) & 1
            new = 1 - old
            pattern ^= 1 << q
            for b in range(n):
                for c in range(k):
                    logits[b, c] += contrib[b, q, new, c] - contrib[b, q, old, c]
        hits = 0
        for b in range(n):
            arg = 0
            top = logits[b, 0]
            for c in range(1, k):
                if logits[b, c] > top:
                    top = logits[b, c]
                    arg = c
            if target < 0:
                if arg != labels[b]:
                    hits += 1
            elif arg == target:
                hits += 1
        counts[pattern] = hits
    return counts


def _sign_scan_numpy(base_logits, contrib, labels, target):
    n, m, _, _ = contrib.shape
    npat = 1 << m
    logits = base_logits + contrib[:, :, 0, :].sum(axis=1)
    counts = np.zeros(npat, dtype=np.int64)
    pattern = 0
    for step in range(npat):
        if step > 0:
            q = (step & -step).bit_length() - 1
            old = (pattern >> q) & 1
            pattern ^= 1 << q
            logits += contrib[:, q, 1 - old, :] - contrib[:, q, old, :]
        pred = logits.argmax(axis=1)
        if target < 0:
            counts[pattern] = int(np.count_nonzero(pred != labels))
        else:
            counts[pattern] = int(np.count_nonzero(pred == target))
    return counts


# ---------------------------------------------------------------------------
# public dispatch
# ---------------------------------------------------------------------------


def perturb_clip(images, tiles, use_numba=None):
    """Tile-expand ``tiles`` over ``images``, add, and clip to [0, 1].

    ``images`` has shape (N, H, W, C); ``tiles`` has shape (N, l, l', C) or
    (1, l, l', C) for one tile shared by the whole batch. Returns the
    clipped points and each row's l-infinity distance from its image.
    """
    images = np.ascontiguousarray(images, dtype=np.float64)
    tiles = np.ascontiguousarray(tiles, dtype=np.float64)
    if tiles.shape[0] not in (1, images.shape[0]):
        raise ValueError("need one tile per image or a single shared tile")
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba:
        return _perturb_clip_numba(images, tiles)
    return _perturb_clip_numpy(images, tiles)


def pairwise_linf(x, threshold, capacity=1024, use_numba=None):
    """Closest pair under l-infinity plus every pair closer than ``threshold``.

    Returns ``(min_distance, i, j, flagged_pairs, flagged_total)``; at most
    ``capacity`` flagged pairs are materialised, ``flagged_total`` counts all.
    """
    x = np.ascontiguousarray(x, dtype=np.float64).reshape(len(x), -1)
    if use_numba is None:
        use_numba = USE_NUMBA
    fn = _pairwise_linf_numba if use_numba else _pairwise_linf_numpy
    best, i, j, flagged, nflag = fn(x, float(threshold), int(capacity))
    return float(best), int(i), int(j), flagged[: min(nflag, capacity)].copy(), int(nflag)


def sign_pattern_scan(base_logits, contrib, labels, target=-1, use_numba=None):
    """Success counts for every +/- pattern of ``m`` tile coordinates.

    ``contrib[b, q, s]`` is the logit change image ``b`` receives when tile
    coordinate ``q`` takes sign option ``s`` (0 for the negative bound, 1 for
    the positive one). Pattern bit ``q`` set means option 1. ``target < 0``
    counts misclassifications, otherwise hits on ``target``. Patterns are
    visited in Gray-code order so each step touches one coordinate.
    """
    base_logits = np.ascontiguousarray(base_logits, dtype=np.float64)
    contrib = np.ascontiguousarray(contrib, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if contrib.shape[1] > 24:
        raise ValueError("refusing to enumerate more than 2**24 sign patterns")
    if use_numba is None:
        use_numba = USE_NUMBA
    fn = _sign_scan_numba if use_numba else _sign_scan_numpy
    return fn(base_logits, contrib, labels, int(target))
