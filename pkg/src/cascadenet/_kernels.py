"""Hot loops, each in an ``@njit`` loop form and a vectorised numpy form.

``cascade`` and ``grow_pa`` are the dispatch entry points; they pick the
compiled version unless ``CASCADENET_DISABLE_NUMBA`` is set.  Both versions
are always importable so the benchmark can time them side by side.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

# --------------------------------------------------------------------------
# double cascade on a realised network
#
# Edge e points from debtor src[e] to creditor dst[e].  xi[e] is the fraction
# of omega[e] written off by the creditor, zeta[e] the fraction recalled from
# the debtor.  Status arrays are step-n quantities; one pass of the loop body
# computes step n+1 from them.


def _cascade_loop(delta, sigma, src, dst, omega, lam, max_steps):
    N = delta.size
    L = src.size
    D = np.empty(N, dtype=np.bool_)
    S = np.empty(N, dtype=np.bool_)
    default_step = np.full(N, -1, dtype=np.int64)
    stress_step = np.full(N, -1, dtype=np.int64)
    traj_d = np.zeros(max_steps + 1, dtype=np.int64)
    traj_s = np.zeros(max_steps + 1, dtype=np.int64)
    nd = 0
    ns = 0
    for v in range(N):
        D[v] = delta[v] <= 0.0
        S[v] = sigma[v] <= 0.0
        if D[v]:
            default_step[v] = 0
            nd += 1
        elif S[v]:
            stress_step[v] = 0
            ns += 1
    traj_d[0] = nd
    traj_s[0] = ns

    xi = np.zeros(L)
    zeta = np.zeros(L)
    for e in range(L):
        if D[src[e]]:
            xi[e] = 1.0
        w = dst[e]
        if D[w]:
            zeta[e] = 1.0
        elif S[w]:
            zeta[e] = lam

    in_shock = np.zeros(N)
    out_shock = np.zeros(N)
    newD = np.empty(N, dtype=np.bool_)
    newS = np.empty(N, dtype=np.bool_)
    n = 0
    while True:
        in_shock[:] = 0.0
        out_shock[:] = 0.0
        for e in range(L):
            in_shock[dst[e]] += omega[e] * xi[e]
            out_shock[src[e]] += omega[e] * zeta[e]
        changed = False
        for v in range(N):
            newD[v] = D[v] or in_shock[v] >= delta[v]
            newS[v] = S[v] or out_shock[v] >= sigma[v]
            if newD[v] != D[v] or newS[v] != S[v]:
                changed = True
        # zeta(n+1) uses default-without-regarding: the creditor's step-n
        # shock minus this debtor's own contribution
        for e in range(L):
            w = dst[e]
            if in_shock[w] - omega[e] * xi[e] >= delta[w]:
                z = 1.0
            elif newS[w]:
                z = lam
            else:
                z = 0.0
            if z != zeta[e]:
                zeta[e] = z
                changed = True
        for e in range(L):
            w = src[e]
            if newD[w] and not D[w]:
                xi[e] = 1.0 if not S[dst[e]] else 1.0 - lam
                changed = True
        if not changed:
            break
        n += 1
        if n > max_steps:
            return D, S, default_step, stress_step, traj_d, traj_s, -1, xi, zeta
        nd = 0
        ns = 0
        for v in range(N):
            if newD[v] and not D[v]:
                default_step[v] = n
            if newS[v] and not newD[v] and stress_step[v] < 0:
                stress_step[v] = n
            D[v] = newD[v]
            S[v] = newS[v]
            if D[v]:
                nd += 1
            elif S[v]:
                ns += 1
        traj_d[n] = nd
        traj_s[n] = ns
    return D, S, default_step, stress_step, traj_d, traj_s, n, xi, zeta


def step_numpy(D, S, xi, zeta, delta, sigma, src, dst, omega, lam):
    """One synchronous step; returns (D', S', xi', zeta')."""
    N = delta.size
    in_shock = np.bincount(dst, weights=omega * xi, minlength=N)
    out_shock = np.bincount(src, weights=omega * zeta, minlength=N)
    newD = D | (in_shock >= delta)
    newS = S | (out_shock >= sigma)
    wor = in_shock[dst] - omega * xi >= delta[dst]
    new_zeta = np.where(wor, 1.0, np.where(newS[dst], lam, 0.0))
    fresh = (newD & ~D)[src]
    new_xi = xi.copy()
    new_xi[fresh] = np.where(S[dst[fresh]], 1.0 - lam, 1.0)
    return newD, newS, new_xi, new_zeta


def _cascade_numpy(delta, sigma, src, dst, omega, lam, max_steps):
    D = delta <= 0.0
    S = sigma <= 0.0
    default_step = np.where(D, 0, -1).astype(np.int64)
    stress_step = np.where(S & ~D, 0, -1).astype(np.int64)
    traj_d = np.zeros(max_steps + 1, dtype=np.int64)
    traj_s = np.zeros(max_steps + 1, dtype=np.int64)
    traj_d[0] = D.sum()
    traj_s[0] = (S & ~D).sum()
    xi = D[src].astype(float)
    zeta = np.where(D[dst], 1.0, np.where(S[dst], lam, 0.0))
    n = 0
    while True:
        newD, newS, new_xi, new_zeta = step_numpy(D, S, xi, zeta, delta, sigma, src, dst, omega, lam)
        if (
            np.array_equal(newD, D)
            and np.array_equal(newS, S)
            and np.array_equal(new_zeta, zeta)
            and np.array_equal(new_xi, xi)
        ):
            break
        n += 1
        if n > max_steps:
            return D, S, default_step, stress_step, traj_d, traj_s, -1, xi, zeta
        default_step[newD & ~D] = n
        stress_step[newS & ~newD & (stress_step < 0)] = n
        D, S, xi, zeta = newD, newS, new_xi, new_zeta
        traj_d[n] = D.sum()
        traj_s[n] = (S & ~D).sum()
    return D, S, default_step, stress_step, traj_d, traj_s, n, xi, zeta


_cascade_numba = njit(cache=True)(_cascade_loop)


def cascade(delta, sigma, src, dst, omega, lam, max_steps):
    """Run the double cascade to its fixed point; returns raw arrays (see module doc)."""
    fn = _cascade_numba if USE_NUMBA else _cascade_numpy
    return fn(delta, sigma, src, dst, omega, float(lam), int(max_steps))


# --------------------------------------------------------------------------
# directed preferential attachment growth
#
# A choice "proportional to j_w + delta_in" maps one uniform onto the
# concatenation of the edge-head list (weight 1 per edge, i.e. in-degree) and
# the node list (weight delta_in per node).


def _pa_loop(n_target, alpha, gamma, d_in, d_out, u, max_edges):
    # u: pre-drawn uniforms (rows, 3): rule, first pick, second pick.
    # Seed graph: directed 3-cycle.
    src = np.empty(max_edges, dtype=np.int64)
    dst = np.empty(max_edges, dtype=np.int64)
    seen = set()
    for i in range(3):
        src[i] = i
        dst[i] = (i + 1) % 3
        seen.add(i * n_target + (i + 1) % 3)
    n = 3
    L = 3
    row = 0
    while n < n_target and row < u.shape[0] and L < max_edges:
        r = u[row, 0]
        if r < alpha:
            x = u[row, 1] * (L + d_in * n)
            w = dst[min(int(x), L - 1)] if x < L else min(int((x - L) / d_in), n - 1)
            v = n
            n += 1
        elif r < 1.0 - gamma:
            x = u[row, 1] * (L + d_out * n)
            v = src[min(int(x), L - 1)] if x < L else min(int((x - L) / d_out), n - 1)
            x = u[row, 2] * (L + d_in * n)
            w = dst[min(int(x), L - 1)] if x < L else min(int((x - L) / d_in), n - 1)
            # rule 2 would create a self-loop or parallel edge: redraw the step
            if v == w or v * n_target + w in seen:
                row += 1
                continue
        else:
            x = u[row, 1] * (L + d_out * n)
            v = src[min(int(x), L - 1)] if x < L else min(int((x - L) / d_out), n - 1)
            w = n
            n += 1
        row += 1
        src[L] = v
        dst[L] = w
        seen.add(v * n_target + w)
        L += 1
    return src[:L].copy(), dst[:L].copy(), n


_pa_numba = njit(cache=True)(_pa_loop)


def grow_pa(n_target, alpha, gamma, d_in, d_out, u, max_edges):
    fn = _pa_numba if USE_NUMBA else _pa_loop
    return fn(int(n_target), float(alpha), float(gamma), float(d_in), float(d_out), u, int(max_edges))
