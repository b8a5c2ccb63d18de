"""Compiled inner loops for histogram tree growth."""
from __future__ import annotations

import numpy as np
from numba import njit

# gains closer than this (relative) count as ties, so summation order cannot
# decide between mathematically equal splits
TIE_RTOL = 1e-12


@njit(cache=True)
def _better(gain, best):
    if best == -np.inf:
        return True
    return gain > best + TIE_RTOL * max(1.0, abs(best))


@njit(cache=True)
def newton_histograms(codes, idx, g, h, B):
    d = codes.shape[1]
    gh = np.zeros((d, B))
    hh = np.zeros((d, B))
    ch = np.zeros((d, B), dtype=np.int64)
    for r in idx:
        gr = g[r]
        hr = h[r]
        for j in range(d):
            b = codes[r, j]
            gh[j, b] += gr
            hh[j, b] += hr
            ch[j, b] += 1
    return gh, hh, ch


@njit(cache=True)
def best_newton_split(gh, hh, ch, n_bins, lam, min_child_weight):
    """Best (feature, bin, gain); scanning order makes the lowest feature/threshold win ties."""
    d, B = gh.shape
    best_j, best_b, best = -1, -1, -np.inf
    G = 0.0
    H = 0.0
    N = 0
    for b in range(B):
        G += gh[0, b]
        H += hh[0, b]
        N += ch[0, b]
    parent = G * G / (H + lam)
    for j in range(d):
        gl = 0.0
        hl = 0.0
        nl = 0
        for b in range(n_bins[j] - 1):
            gl += gh[j, b]
            hl += hh[j, b]
            nl += ch[j, b]
            nr = N - nl
            if nl == 0 or nr == 0:
                continue
            hr = H - hl
            if hl < min_child_weight or hr < min_child_weight:
                continue
            gr = G - gl
            gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
            if _better(gain, best):
                best, best_j, best_b = gain, j, b
    return best_j, best_b, best, G, H


@njit(cache=True)
def gini_histograms(codes, idx, y, feats, B, C):
    m = feats.size
    hist = np.zeros((m, B, C))
    for r in idx:
        c = y[r]
        for t in range(m):
            hist[t, codes[r, feats[t]], c] += 1.0
    return hist


@njit(cache=True)
def _impurity(counts):
    n = 0.0
    sq = 0.0
    for c in counts:
        n += c
        sq += c * c
    return n - sq / n if n > 0 else 0.0


@njit(cache=True)
def best_gini_split(hist, totals, n_bins_sel):
    m, B, C = hist.shape
    parent = _impurity(totals)
    best_t, best_b, best = -1, -1, -np.inf
    left = np.zeros(C)
    right = np.zeros(C)
    for t in range(m):
        left[:] = 0.0
        for b in range(n_bins_sel[t] - 1):
            nl = 0.0
            for c in range(C):
                left[c] += hist[t, b, c]
                nl += left[c]
            nr = 0.0
            for c in range(C):
                right[c] = totals[c] - left[c]
                nr += right[c]
            if nl == 0 or nr == 0:
                continue
            gain = parent - _impurity(left) - _impurity(right)
            if _better(gain, best):
                best, best_t, best_b = gain, t, b
    return best_t, best_b, best
