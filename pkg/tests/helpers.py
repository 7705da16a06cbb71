"""Shared test utilities: finite differences and small brute-force oracles."""

import math

import numpy as np


def central_diff(f, x, h=1e-5):
    """Central-difference gradient of scalar f at matrix x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        left = x.copy()
        right = x.copy()
        left[idx] -= h
        right[idx] += h
        g[idx] = (f(right) - f(left)) / (2 * h)
    return g


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def cos(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def feature_contrast_bruteforce(feats, tau):
    """Direct double-loop evaluation of the cross-view feature contrast."""
    n_views = len(feats)
    n = feats[0].shape[0]
    total = 0.0
    for v in range(n_views):
        nxt = (v + 1) % n_views
        for i in range(n):
            num = math.exp(cos(feats[v][i], feats[nxt][i]) / tau)
            den = -math.exp(1.0 / tau)
            for j in range(n):
                for mat in (feats[v], feats[nxt]):
                    den += math.exp(cos(feats[v][i], mat[j]) / tau)
            total += -math.log(num / den)
    return total / n


def label_contrast_bruteforce(probs, tau):
    """Column-level contrast plus the cluster-size entropy regularizer."""
    n_views = len(probs)
    n, k = probs[0].shape
    total = 0.0
    for v in range(n_views):
        nxt = (v + 1) % n_views
        for j in range(k):
            num = math.exp(cos(probs[v][:, j], probs[nxt][:, j]) / tau)
            den = -math.exp(1.0 / tau)
            for col in range(k):
                for mat in (probs[v], probs[nxt]):
                    den += math.exp(cos(probs[v][:, j], mat[:, col]) / tau)
            total += -math.log(num / den)
    loss = total / k
    for v in range(n_views):
        sizes = probs[v].mean(axis=0)
        loss += float(np.sum(sizes[sizes > 0] * np.log(sizes[sizes > 0])))
    return loss


def partial_contrast_bruteforce(fused, feats, tau):
    n = fused.shape[0]
    total = 0.0
    for feat in feats:
        for i in range(n):
            num = math.exp(cos(fused[i], feat[i]) / tau)
            den = sum(math.exp(cos(fused[i], feat[j]) / tau)
                      for j in range(n) if j != i)
            total += -math.log(num / den)
    return total / n


def single_contrast_bruteforce(fused, feat, noisy, tau):
    n = fused.shape[0]
    total = 0.0
    for i in range(n):
        pos = math.exp(cos(fused[i], feat[i]) / tau)
        neg = math.exp(cos(feat[i], noisy[i]) / tau)
        total += -math.log(pos / (pos + neg))
    return total / n


def drift_contrast_bruteforce(fused, pos_ref, neg_ref, tau):
    n = fused.shape[0]
    total = 0.0
    for i in range(n):
        p = math.exp(cos(fused[i], pos_ref[i]) / tau)
        q = math.exp(cos(fused[i], neg_ref[i]) / tau)
        total += -math.log(p / (p + q))
    return total / n
