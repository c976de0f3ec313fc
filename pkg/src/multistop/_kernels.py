"""Hot inner loops: numba-compiled with a pure-numpy twin.

Set ``MULTISTOP_DISABLE_NUMBA=1`` to force the numpy path.  Both paths sum
children in id order, one child at a time, so they agree to the last bit
on the same inputs.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("MULTISTOP_DISABLE_NUMBA", "").lower() not in (
    "1", "true", "yes", "on"
)


# --- tree backward induction -------------------------------------------------

def backward_induction_np(first_child, n_children, prob, reward, level_offsets, from_level):
    """Snell values for every node at time >= ``from_level``; NaN elsewhere."""
    n_nodes = reward.shape[0]
    horizon = level_offsets.shape[0] - 2
    v = np.full(n_nodes, np.nan)
    lo, hi = level_offsets[horizon], level_offsets[horizon + 1]
    v[lo:hi] = reward[lo:hi]
    for lev in range(horizon - 1, from_level - 1, -1):
        lo, hi = level_offsets[lev], level_offsets[lev + 1]
        fc = first_child[lo:hi]
        nc = n_children[lo:hi]
        cont = np.zeros(hi - lo)
        for k in range(int(nc.max())):
            has = nc > k
            c = fc[has] + k
            cont[has] += prob[c] * v[c]
        v[lo:hi] = np.maximum(reward[lo:hi], cont)
    return v


def evaluate_decisions_np(first_child, n_children, prob, reward, decisions, level_offsets,
                          from_level):
    """Value of a fixed stop/continue assignment, backward over reached nodes."""
    n_nodes = reward.shape[0]
    horizon = level_offsets.shape[0] - 2
    w = np.zeros(n_nodes)
    for lev in range(horizon, from_level - 1, -1):
        lo, hi = level_offsets[lev], level_offsets[lev + 1]
        d = decisions[lo:hi]
        if lev < horizon:
            fc = first_child[lo:hi]
            nc = n_children[lo:hi]
            cont = np.zeros(hi - lo)
            for k in range(int(nc.max())):
                has = nc > k
                c = fc[has] + k
                cont[has] += prob[c] * w[c]
        else:
            cont = np.zeros(hi - lo)
        w[lo:hi] = np.where(d == 1, reward[lo:hi], np.where(d == 0, cont, 0.0))
    return w


# --- product lattice ---------------------------------------------------------

def lattice_step_np(v_next, phi, q1, q2, eps_rel):
    """One backward step of the two-asset lattice.

    ``v_next`` has shape (k+2, k+2), ``phi`` (k+1, k+1); returns continuation,
    value and exercise flag on the (k+1, k+1) grid.
    """
    cont = (1.0 - q1) * (1.0 - q2) * v_next[:-1, :-1]
    cont = cont + (1.0 - q1) * q2 * v_next[:-1, 1:]
    cont = cont + q1 * (1.0 - q2) * v_next[1:, :-1]
    cont = cont + q1 * q2 * v_next[1:, 1:]
    v = np.maximum(phi, cont)
    exercise = v <= phi + eps_rel * np.maximum(1.0, np.abs(v))
    return cont, v, exercise


if HAVE_NUMBA:

    @njit(cache=True)
    def backward_induction_nb(first_child, n_children, prob, reward, level_offsets, from_level):
        n_nodes = reward.shape[0]
        v = np.full(n_nodes, np.nan)
        stop_id = level_offsets[from_level]
        for i in range(n_nodes - 1, stop_id - 1, -1):
            nc = n_children[i]
            if nc == 0:
                v[i] = reward[i]
            else:
                fc = first_child[i]
                cont = 0.0
                for c in range(fc, fc + nc):
                    cont += prob[c] * v[c]
                v[i] = reward[i] if reward[i] >= cont else cont
        return v

    @njit(cache=True)
    def evaluate_decisions_nb(first_child, n_children, prob, reward, decisions, level_offsets,
                              from_level):
        n_nodes = reward.shape[0]
        w = np.zeros(n_nodes)
        stop_id = level_offsets[from_level]
        for i in range(n_nodes - 1, stop_id - 1, -1):
            d = decisions[i]
            if d == 1:
                w[i] = reward[i]
            elif d == 0:
                fc = first_child[i]
                cont = 0.0
                for c in range(fc, fc + n_children[i]):
                    cont += prob[c] * w[c]
                w[i] = cont
        return w

    @njit(cache=True)
    def lattice_step_nb(v_next, phi, q1, q2, eps_rel):
        m = phi.shape[0]
        cont = np.empty((m, m))
        v = np.empty((m, m))
        exercise = np.empty((m, m), dtype=np.bool_)
        a = (1.0 - q1) * (1.0 - q2)
        b = (1.0 - q1) * q2
        c = q1 * (1.0 - q2)
        d = q1 * q2
        for i in range(m):
            for j in range(m):
                x = a * v_next[i, j]
                x = x + b * v_next[i, j + 1]
                x = x + c * v_next[i + 1, j]
                x = x + d * v_next[i + 1, j + 1]
                cont[i, j] = x
                p = phi[i, j]
                val = p if p >= x else x
                v[i, j] = val
                exercise[i, j] = val <= p + eps_rel * max(1.0, abs(val))
        return cont, v, exercise

else:  # pragma: no cover
    backward_induction_nb = backward_induction_np
    evaluate_decisions_nb = evaluate_decisions_np
    lattice_step_nb = lattice_step_np


if USE_NUMBA:
    backward_induction = backward_induction_nb
    evaluate_decisions = evaluate_decisions_nb
    lattice_step = lattice_step_nb
else:
    backward_induction = backward_induction_np
    evaluate_decisions = evaluate_decisions_np
    lattice_step = lattice_step_np
