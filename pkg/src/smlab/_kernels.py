"""Fused numba kernels for population training.

Same math as ``learner.sarsa_update`` on stacked parameters; the numpy path
stays the reference and the test suite checks these kernels against it.
Parameters are laid out as in ``learner.MLP`` with an agent axis:
W (A, in, out), b (A, 1, out). The network has exactly two hidden layers.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def _fwd_row(x, W1, b1, W2, b2, W3, b3, h1, h2, q):
    n_in, n1 = W1.shape
    n2 = W2.shape[1]
    nq = W3.shape[1]
    for k in range(n1):
        h1[k] = b1[0, k]
    for i in range(n_in):
        xi = x[i]
        if xi != 0.0:
            for k in range(n1):
                h1[k] += xi * W1[i, k]
    for k in range(n1):
        if h1[k] < 0.0:
            h1[k] = 0.0
    for k in range(n2):
        h2[k] = b2[0, k]
    for i in range(n1):
        hi = h1[i]
        if hi != 0.0:
            for k in range(n2):
                h2[k] += hi * W2[i, k]
    for k in range(n2):
        if h2[k] < 0.0:
            h2[k] = 0.0
    for k in range(nq):
        q[k] = b3[0, k]
    for i in range(n2):
        hi = h2[i]
        if hi != 0.0:
            for k in range(nq):
                q[k] += hi * W3[i, k]


@njit(cache=True, fastmath=True)
def population_q(W1, b1, W2, b2, W3, b3, obs):
    """Q-values for one observation per agent: obs (A, D) -> (A, n_actions)."""
    A = W1.shape[0]
    out = np.empty((A, W3.shape[2]), dtype=W1.dtype)
    h1 = np.empty(W1.shape[2], dtype=W1.dtype)
    h2 = np.empty(W2.shape[2], dtype=W1.dtype)
    for a in range(A):
        _fwd_row(obs[a], W1[a], b1[a], W2[a], b2[a], W3[a], b3[a], h1, h2, out[a])
    return out


@njit(cache=True, fastmath=True)
def _adam(p, g, m, v, beta1, beta2, step, bc2, eps):
    pf = p.ravel()
    gf = g.ravel()
    mf = m.ravel()
    vf = v.ravel()
    for k in range(pf.size):
        gk = gf[k]
        mf[k] = beta1 * mf[k] + (1.0 - beta1) * gk
        vf[k] = beta2 * vf[k] + (1.0 - beta2) * (gk * gk)
        pf[k] -= step * mf[k] / (np.sqrt(vf[k] / bc2) + eps)


@njit(cache=True)
def population_sarsa_step(
    W1, b1, W2, b2, W3, b3,
    mW1, mb1, mW2, mb2, mW3, mb3,
    vW1, vb1, vW2, vb2, vW3, vb3,
    t, lr, beta1, beta2, eps, gamma,
    obs, act, rew, nobs, nact, term,
    buf_obs, buf_act, buf_rew, buf_nobs, buf_nact, buf_term, slot, step_idx,
):
    """One SARSA + Adam step per agent on [fresh transition] + replay sample.

    Fresh transition: obs (A, D), act (A,), rew (A,), nobs, nact, term (scalar bool).
    Replay rows for agent a: buffer entries (slot[a, r], step_idx[a, r], a).
    ``t`` is the Adam step count after this update. Returns per-agent loss.
    """
    A, D, n1 = W1.shape
    n2 = W2.shape[2]
    nq = W3.shape[2]
    R = slot.shape[1]
    B = R + 1
    dt = W1.dtype
    # rows 0..B-1 hold o, rows B..2B-1 hold o'
    X = np.empty((2 * B, D), dtype=dt)
    acts = np.empty(B, dtype=np.int64)
    nacts = np.empty(B, dtype=np.int64)
    rews = np.empty(B, dtype=dt)
    terms = np.empty(B, dtype=np.bool_)
    dQ = np.zeros((B, nq), dtype=dt)
    losses = np.zeros(A)

    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    step = lr / bc1

    for a in range(A):
        X[0] = obs[a]
        X[B] = nobs[a]
        acts[0] = act[a]
        nacts[0] = nact[a]
        rews[0] = rew[a]
        terms[0] = term
        for r in range(1, B):
            s = slot[a, r - 1]
            k = step_idx[a, r - 1]
            X[r] = buf_obs[s, k, a]
            X[B + r] = buf_nobs[s, k, a]
            acts[r] = buf_act[s, k, a]
            nacts[r] = buf_nact[s, k, a]
            rews[r] = buf_rew[s, k, a]
            terms[r] = buf_term[s, k]

        w1 = W1[a]; w2 = W2[a]; w3 = W3[a]
        H1 = np.maximum(np.dot(X, w1) + b1[a], 0.0)
        H2 = np.maximum(np.dot(H1, w2) + b2[a], 0.0)
        Q = np.dot(H2, w3) + b3[a]

        loss = 0.0
        dQ[:] = 0.0
        for r in range(B):
            target = rews[r]
            if not terms[r]:
                target += gamma * Q[B + r, nacts[r]]
            td = Q[r, acts[r]] - target
            loss += td * td
            dQ[r, acts[r]] = 2.0 * td / B
        losses[a] = loss / B
        if not np.isfinite(losses[a]):
            return losses

        h1 = H1[:B]
        h2 = H2[:B]
        gW3 = np.dot(h2.T, dQ)
        gb3 = dQ.sum(axis=0).reshape(1, nq)
        D2 = np.dot(dQ, w3.T) * (h2 > 0.0)
        gW2 = np.dot(h1.T, D2)
        gb2 = D2.sum(axis=0).reshape(1, n2)
        D1 = np.dot(D2, w2.T) * (h1 > 0.0)
        gW1 = np.dot(X[:B].T, D1)
        gb1 = D1.sum(axis=0).reshape(1, n1)

        _adam(w1, gW1, mW1[a], vW1[a], beta1, beta2, step, bc2, eps)
        _adam(b1[a], gb1, mb1[a], vb1[a], beta1, beta2, step, bc2, eps)
        _adam(w2, gW2, mW2[a], vW2[a], beta1, beta2, step, bc2, eps)
        _adam(b2[a], gb2, mb2[a], vb2[a], beta1, beta2, step, bc2, eps)
        _adam(w3, gW3, mW3[a], vW3[a], beta1, beta2, step, bc2, eps)
        _adam(b3[a], gb3, mb3[a], vb3[a], beta1, beta2, step, bc2, eps)
    return losses
