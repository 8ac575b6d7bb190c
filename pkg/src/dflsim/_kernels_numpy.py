"""Pure-numpy implementations of the hot numeric kernels.

Reference semantics for the numba backend; selected at import time by
`dflsim.backend` (DFLSIM_BACKEND=numpy forces this module).
"""

import numpy as np


def pairwise_sq_dists(models):
    """Squared Euclidean distance matrix between the rows of `models`."""
    diff = models[:, None, :] - models[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def dists_to_ref(models, ref):
    """Euclidean distance from each row of `models` to `ref`."""
    diff = models - ref[None, :]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def krum_scores(models, k_nearest):
    """Per-row sum of squared distances to its `k_nearest` closest peers."""
    d2 = pairwise_sq_dists(models)
    k = d2.shape[0]
    take = min(k_nearest + 1, k)
    scores = np.empty(k)
    for i in range(k):
        row = np.sort(d2[i])
        scores[i] = row[1:take].sum()
    return scores


def trimmed_mean(models, trim):
    """Coordinate-wise mean after dropping the `trim` largest and smallest."""
    srt = np.sort(models, axis=0)
    hi = srt.shape[0] - trim
    return srt[trim:hi].sum(axis=0) / (hi - trim)


def coord_median(models):
    """Coordinate-wise median; even counts average the two middle values."""
    return np.median(models, axis=0)


def linreg_sgd(features, targets, w0, eta, batches):
    """Run SGD steps on batch-total squared error for a linear model.

    `batches` is an int64 (steps, batch) index matrix into the shard; the
    gradient is summed (not averaged) over the batch.
    """
    w = w0.copy()
    for s in range(batches.shape[0]):
        idx = batches[s]
        xb = features[idx]
        rb = xb @ w - targets[idx]
        w = w - eta * 2.0 * (rb @ xb)
    return w


def logreg_sgd(features, labels, w0, eta, batches, n_classes):
    """SGD steps on batch-total softmax cross-entropy.

    Parameter layout: class weight matrix flattened row-major, then one
    bias per class.
    """
    w = w0.copy()
    d = features.shape[1]
    nw = n_classes * d
    for s in range(batches.shape[0]):
        idx = batches[s]
        xb = features[idx]
        yb = labels[idx]
        mat = w[:nw].reshape(n_classes, d)
        logits = xb @ mat.T + w[nw:]
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(len(idx)), yb] -= 1.0
        w = w.copy()
        w[:nw] -= eta * (p.T @ xb).ravel()
        w[nw:] -= eta * p.sum(axis=0)
    return w
