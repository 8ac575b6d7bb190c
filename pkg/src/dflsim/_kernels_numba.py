"""Numba-JIT implementations of the hot numeric kernels.

Loop-level mirrors of `_kernels_numpy`; agreement between the two backends
is enforced by tests. Keep signatures in sync.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def pairwise_sq_dists(models):
    k = models.shape[0]
    d = models.shape[1]
    out = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            s = 0.0
            for j in range(d):
                diff = models[a, j] - models[b, j]
                s += diff * diff
            out[a, b] = s
            out[b, a] = s
    return out


@njit(cache=True, nogil=True)
def dists_to_ref(models, ref):
    k = models.shape[0]
    d = models.shape[1]
    out = np.empty(k)
    for a in range(k):
        s = 0.0
        for j in range(d):
            diff = models[a, j] - ref[j]
            s += diff * diff
        out[a] = math.sqrt(s)
    return out


@njit(cache=True, nogil=True)
def krum_scores(models, k_nearest):
    d2 = pairwise_sq_dists(models)
    k = d2.shape[0]
    take = min(k_nearest + 1, k)
    scores = np.empty(k)
    for i in range(k):
        row = np.sort(d2[i].copy())
        s = 0.0
        for j in range(1, take):
            s += row[j]
        scores[i] = s
    return scores


@njit(cache=True, nogil=True)
def _sorted_column(models, j, col):
    # insertion sort into the reused buffer; pools are small
    k = models.shape[0]
    for a in range(k):
        key = models[a, j]
        b = a - 1
        while b >= 0 and col[b] > key:
            col[b + 1] = col[b]
            b -= 1
        col[b + 1] = key


@njit(cache=True, nogil=True)
def trimmed_mean(models, trim):
    k = models.shape[0]
    d = models.shape[1]
    hi = k - trim
    out = np.empty(d)
    col = np.empty(k)
    for j in range(d):
        _sorted_column(models, j, col)
        s = 0.0
        for a in range(trim, hi):
            s += col[a]
        out[j] = s / (hi - trim)
    return out


@njit(cache=True, nogil=True)
def coord_median(models):
    k = models.shape[0]
    d = models.shape[1]
    out = np.empty(d)
    col = np.empty(k)
    mid = k // 2
    for j in range(d):
        _sorted_column(models, j, col)
        if k % 2 == 1:
            out[j] = col[mid]
        else:
            out[j] = (col[mid - 1] + col[mid]) / 2.0
    return out


@njit(cache=True, nogil=True)
def linreg_sgd(features, targets, w0, eta, batches):
    w = w0.copy()
    d = features.shape[1]
    g = np.empty(d)
    for s in range(batches.shape[0]):
        for j in range(d):
            g[j] = 0.0
        for bi in range(batches.shape[1]):
            row = batches[s, bi]
            pred = 0.0
            for j in range(d):
                pred += features[row, j] * w[j]
            r2 = 2.0 * (pred - targets[row])
            for j in range(d):
                g[j] += r2 * features[row, j]
        for j in range(d):
            w[j] -= eta * g[j]
    return w


@njit(cache=True, nogil=True)
def logreg_sgd(features, labels, w0, eta, batches, n_classes):
    w = w0.copy()
    d = features.shape[1]
    nw = n_classes * d
    gw = np.empty((n_classes, d))
    gb = np.empty(n_classes)
    logits = np.empty(n_classes)
    for s in range(batches.shape[0]):
        for c in range(n_classes):
            gb[c] = 0.0
            for j in range(d):
                gw[c, j] = 0.0
        for bi in range(batches.shape[1]):
            row = batches[s, bi]
            for c in range(n_classes):
                acc = w[nw + c]
                base = c * d
                for j in range(d):
                    acc += w[base + j] * features[row, j]
                logits[c] = acc
            m = logits[0]
            for c in range(1, n_classes):
                if logits[c] > m:
                    m = logits[c]
            tot = 0.0
            for c in range(n_classes):
                logits[c] = math.exp(logits[c] - m)
                tot += logits[c]
            for c in range(n_classes):
                p = logits[c] / tot
                if c == labels[row]:
                    p -= 1.0
                gb[c] += p
                for j in range(d):
                    gw[c, j] += p * features[row, j]
        for c in range(n_classes):
            base = c * d
            for j in range(d):
                w[base + j] -= eta * gw[c, j]
            w[nw + c] -= eta * gb[c]
    return w
