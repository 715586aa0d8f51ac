"""Brute-force enumeration oracles over stopping rules.

These deliberately avoid backward induction: every adapted stopping rule on
the (sub)tree is enumerated and the expectation evaluated path by path, so
they certify the dynamic-programming solvers from the outside.
"""

from __future__ import annotations

import numpy as np

from .errors import TooLargeToEnumerate
from .lattice import Tree

MAX_STOP_SLOTS = 22
MAX_PAIR_SLOTS = 11


def _rule_bits(n_slots: int) -> np.ndarray:
    r = 1 << n_slots
    return ((np.arange(r)[:, None] >> np.arange(n_slots)) & 1).astype(bool)


def enumerate_stop_value(tree: Tree, payoff, drift=None, mode="sup", k0=0, i0=0) -> float:
    """Exact optimum of E[sum drift*dt + payoff at stop] over all stopping rules.

    The optimum runs over every assignment of {stop, continue} to the
    non-terminal nodes of the subtree rooted at node (k0, i0); the terminal
    layer is a forced stop.  ``mode`` selects sup or inf.
    """
    b = tree.n_branches
    N = tree.grid.steps
    depth = N - k0
    dt = tree.grid.dt
    if depth == 0:
        return float(payoff.layer(N)[i0])

    n_slots = (b**depth - 1) // (b - 1)
    if n_slots > MAX_STOP_SLOTS:
        raise TooLargeToEnumerate(f"{n_slots} decision nodes > {MAX_STOP_SLOTS}")
    bits = _rule_bits(n_slots)
    offsets = np.concatenate([[0], np.cumsum(b ** np.arange(depth))])

    n_paths = b**depth
    vals = np.zeros(bits.shape[0])
    w = tree.base_weights
    for p in range(n_paths):
        digits = []
        rem = p
        for _ in range(depth):
            digits.append(rem % b)
            rem //= b
        digits.reverse()
        prob = 1.0
        cum = 0.0
        local = 0
        pay = np.empty(depth + 1)
        slots = np.empty(depth, dtype=int)
        for d in range(depth):
            node = i0 * (b**d) + local
            pay[d] = cum + payoff.layer(k0 + d)[node]
            slots[d] = offsets[d] + local
            if drift is not None:
                cum += drift.layer(k0 + d)[node] * dt
            prob *= w[digits[d]]
            local = local * b + digits[d]
        pay[depth] = cum + payoff.layer(N)[i0 * (b**depth) + local]
        sel = np.full(bits.shape[0], depth)
        for d in range(depth - 1, -1, -1):
            sel = np.where(bits[:, slots[d]], d, sel)
        vals += prob * pay[sel]
    return float(vals.max() if mode == "sup" else vals.min())


def _path_digits(p: int, depth: int, b: int):
    digits = []
    for _ in range(depth):
        digits.append(p % b)
        p //= b
    digits.reverse()
    return digits


def dynkin_pair_oracle(tree: Tree, terminal, lower, upper, drift=None, pre_jump=None, weights=None):
    """Exact min-max over pairs of stopping rules of the two-player stopped payoff.

    The minimizer stops to pay the upper barrier, the maximizer to collect
    the lower one; on a simultaneous stop before the horizon the upper
    payoff applies, at the horizon the terminal value is paid.  Flagged
    layers contribute an extra decision instant just before the grid time,
    paying the pre-jump barrier values.

    Returns (infsup, supinf): min over minimizer rules of the max over
    maximizer rules, and the reverse.  ``weights`` optionally replaces the
    base branch weights by per-layer, per-node tilted weights.
    """
    b = tree.n_branches
    N = tree.grid.steps
    dt = tree.grid.dt
    pre_jump = pre_jump or {}

    # global slot table: "at" slots on non-terminal nodes, "pre" slots on
    # every node of a flagged layer (the decision just before t_k)
    slot_id = {}
    for j in range(N + 1):
        if j in pre_jump and j > 0:
            for i in range(tree.layer_size(j)):
                slot_id[("pre", j, i)] = len(slot_id)
        if j < N:
            for i in range(tree.layer_size(j)):
                slot_id[("at", j, i)] = len(slot_id)
    n_slots = len(slot_id)
    if n_slots > MAX_PAIR_SLOTS:
        raise TooLargeToEnumerate(f"{n_slots} decision slots > {MAX_PAIR_SLOTS} for pair enumeration")
    bits = _rule_bits(n_slots)
    r = bits.shape[0]

    total = np.zeros((r, r))
    for p in range(b**N):
        digits = _path_digits(p, N, b)
        node = 0
        prob = 1.0
        cum = 0.0
        steps = []  # (slot index, pay_upper, pay_lower) in time order
        for j in range(N + 1):
            if j in pre_jump and j > 0:
                lp, up = pre_jump[j]
                lo = lp if lp is not None else lower.layer(j)
                hi = up if up is not None else upper.layer(j)
                steps.append((slot_id[("pre", j, node)], cum + hi[node], cum + lo[node]))
            if j < N:
                steps.append(
                    (slot_id[("at", j, node)], cum + upper.layer(j)[node], cum + lower.layer(j)[node])
                )
                if drift is not None:
                    cum += drift.layer(j)[node] * dt
                wrow = tree.base_weights if weights is None else weights[j][node]
                prob *= wrow[digits[j]]
                node = node * b + digits[j]
        pay_terminal = cum + terminal[node]

        val = np.full((r, r), pay_terminal)
        for s, pay_u, pay_l in reversed(steps):
            stop_min = bits[:, s][:, None]
            stop_max = bits[:, s][None, :]
            val = np.where(stop_min, pay_u, np.where(stop_max, pay_l, val))
        total += prob * val

    infsup = float(total.max(axis=1).min())
    supinf = float(total.min(axis=0).max())
    return infsup, supinf
