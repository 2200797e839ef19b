"""Compiled inner loops for the three trainers.

Each kernel applies exactly the per-example update that the numpy reference code
in embeddings / network / baseline computes; tests compare them step for step.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@njit(cache=True)
def _log1pexp(x):
    # log(1 + e^x) without overflow
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def sgns_pair_update(W, C, center, context, negs, lr, neu):
    """One skip-gram pair: returns the pair loss, updates C in place and W[center]."""
    d = W.shape[1]
    for j in range(d):
        neu[j] = 0.0
    loss = 0.0
    for n in range(negs.shape[0] + 1):
        if n == 0:
            target = context
            label = 1.0
        else:
            target = negs[n - 1]
            label = 0.0
        f = 0.0
        for j in range(d):
            f += W[center, j] * C[target, j]
        if label > 0.0:
            loss += _log1pexp(-f)
        else:
            loss += _log1pexp(f)
        g = (label - _sigmoid(f)) * lr
        for j in range(d):
            neu[j] += g * C[target, j]
        for j in range(d):
            C[target, j] += g * W[center, j]
    for j in range(d):
        W[center, j] += neu[j]
    return loss


@njit(cache=True)
def _draw(cum):
    r = np.random.random() * cum[cum.shape[0] - 1]
    return np.searchsorted(cum, r, side="right")


@njit(cache=True)
def sgns_train(W, C, corpus, starts, keep_prob, neg_cum, neg_offset,
               epochs, radius, k, lr0, lr_floor, seed):
    """Skip-gram with negative sampling over a flattened, pre-encoded corpus.

    ``starts`` holds sentence boundaries into ``corpus`` (length n_sentences + 1).
    Returns the mean pair loss of the final epoch.
    """
    np.random.seed(seed)
    d = W.shape[1]
    neu = np.zeros(d)
    negs = np.zeros(k, dtype=np.int64)
    buf = np.zeros(corpus.shape[0], dtype=np.int64)
    total = epochs * corpus.shape[0]
    done = 0
    last_loss = 0.0
    for _ in range(epochs):
        loss_sum = 0.0
        pairs = 0
        for s in range(starts.shape[0] - 1):
            n = 0
            for p in range(starts[s], starts[s + 1]):
                tok = corpus[p]
                if keep_prob[tok] < 1.0 and np.random.random() >= keep_prob[tok]:
                    continue
                buf[n] = tok
                n += 1
            for t in range(n):
                lr = lr0 * (1.0 - done / total)
                if lr < lr_floor:
                    lr = lr_floor
                done += 1
                b = 1 + np.random.randint(radius)
                lo = max(0, t - b)
                hi = min(n, t + b + 1)
                for c in range(lo, hi):
                    if c == t:
                        continue
                    for q in range(k):
                        negs[q] = _draw(neg_cum) + neg_offset
                    loss_sum += sgns_pair_update(W, C, buf[t], buf[c], negs, lr, neu)
                    pairs += 1
            done += (starts[s + 1] - starts[s]) - n
        last_loss = loss_sum / max(pairs, 1)
    return last_loss


@njit(cache=True)
def mlp_train_epoch(E, flat, sizes, w_off, b_off, wins, gold, order, lr, lam):
    """Per-example SGD over ``order``; returns the summed NLL (pre-update).

    Layer l maps sizes[l] -> sizes[l+1]; its weight is flat[w_off[l]:] row-major
    and its bias flat[b_off[l]:]. Tanh on all but the last layer, softmax on top.
    """
    n_layers = sizes.shape[0] - 1
    d = E.shape[1]
    width = wins.shape[1]
    max_size = 0
    for l in range(sizes.shape[0]):
        if sizes[l] > max_size:
            max_size = sizes[l]
    acts = np.zeros((n_layers + 1, max_size))
    delta = np.zeros(max_size)
    dprev = np.zeros(max_size)
    total = 0.0
    for step in range(order.shape[0]):
        ex = order[step]
        for k in range(width):
            row = wins[ex, k]
            for j in range(d):
                acts[0, k * d + j] = E[row, j]
        for l in range(n_layers):
            n_in = sizes[l]
            n_out = sizes[l + 1]
            wo = w_off[l]
            for i in range(n_out):
                s = flat[b_off[l] + i]
                base = wo + i * n_in
                for j in range(n_in):
                    s += flat[base + j] * acts[l, j]
                acts[l + 1, i] = math.tanh(s) if l < n_layers - 1 else s
        n_cls = sizes[n_layers]
        m = acts[n_layers, 0]
        for c in range(1, n_cls):
            if acts[n_layers, c] > m:
                m = acts[n_layers, c]
        z = 0.0
        for c in range(n_cls):
            z += math.exp(acts[n_layers, c] - m)
        g = gold[ex]
        total += -(acts[n_layers, g] - m - math.log(z))
        for c in range(n_cls):
            delta[c] = math.exp(acts[n_layers, c] - m) / z
        delta[g] -= 1.0

        for l in range(n_layers - 1, -1, -1):
            n_in = sizes[l]
            n_out = sizes[l + 1]
            wo = w_off[l]
            for j in range(n_in):
                dprev[j] = 0.0
            for i in range(n_out):
                gi = delta[i]
                base = wo + i * n_in
                for j in range(n_in):
                    wij = flat[base + j]
                    dprev[j] += wij * gi
                    flat[base + j] = wij - lr * (gi * acts[l, j] + lam * wij)
                flat[b_off[l] + i] -= lr * gi
            if l > 0:
                for j in range(n_in):
                    h = acts[l, j]
                    delta[j] = dprev[j] * (1.0 - h * h)
        for k in range(width):
            row = wins[ex, k]
            for j in range(d):
                E[row, j] -= lr * dprev[k * d + j]
    return total


@njit(cache=True)
def maxent_train_epoch(V, scale, feats, gold, order, lr, lam):
    """Per-example SGD for multinomial logistic regression with L2.

    Weights are ``scale[0] * V``; the L2 shrink is folded into the scalar so each
    step only touches the active feature rows. ``feats`` is padded with -1.
    Returns the summed NLL (pre-update).
    """
    n_cls = V.shape[1]
    z = np.zeros(n_cls)
    total = 0.0
    for step in range(order.shape[0]):
        ex = order[step]
        s = scale[0]
        for c in range(n_cls):
            acc = 0.0
            for q in range(feats.shape[1]):
                f = feats[ex, q]
                if f >= 0:
                    acc += V[f, c]
            z[c] = s * acc
        m = z.max()
        norm = 0.0
        for c in range(n_cls):
            norm += math.exp(z[c] - m)
        g = gold[ex]
        total += -(z[g] - m - math.log(norm))
        shrink = 1.0 - lr * lam
        s *= shrink
        for c in range(n_cls):
            p = math.exp(z[c] - m) / norm
            if c == g:
                p -= 1.0
            for q in range(feats.shape[1]):
                f = feats[ex, q]
                if f >= 0:
                    V[f, c] -= lr * p / s
        if s < 1e-6:
            for f in range(V.shape[0]):
                for c in range(n_cls):
                    V[f, c] *= s
            s = 1.0
        scale[0] = s
    return total
