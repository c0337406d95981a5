"""Skeletons (directed interbank graphs) and their node/edge type laws.

Edges point from debtor to creditor.  A node's type is (j, k) = (in-degree,
out-degree); an edge's type is (k, j) = (out-degree of its debtor, in-degree
of its creditor).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.stats import poisson

from . import _kernels

log = logging.getLogger(__name__)

FILE_MAGIC = "cascadenet-skeleton"
FILE_VERSION = "v1"


class SkeletonFormatError(ValueError):
    pass


class BalanceError(RuntimeError):
    """Degree draws never balanced within the retry budget."""


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Directed simple graph on nodes 0..N-1; edge ``e`` is ``src[e] -> dst[e]``."""

    N: int
    src: np.ndarray = field(repr=False)
    dst: np.ndarray = field(repr=False)

    def __post_init__(self):
        src = np.ascontiguousarray(self.src, dtype=np.int64)
        dst = np.ascontiguousarray(self.dst, dtype=np.int64)
        if src.shape != dst.shape or src.ndim != 1:
            raise ValueError("src and dst must be 1-d arrays of equal length")
        if src.size and (src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= self.N):
            raise ValueError("edge endpoint out of range")
        if np.any(src == dst):
            raise ValueError("self-loops are not allowed")
        for a in (src, dst):
            a.setflags(write=False)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)

    @property
    def L(self) -> int:
        return self.src.size

    @cached_property
    def in_deg(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.N)

    @cached_property
    def out_deg(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.N)

    @cached_property
    def in_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR (ptr, edge ids) of edges grouped by creditor."""
        order = np.argsort(self.dst, kind="stable")
        ptr = np.zeros(self.N + 1, dtype=np.int64)
        np.cumsum(self.in_deg, out=ptr[1:])
        return ptr, order

    @cached_property
    def out_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR (ptr, edge ids) of edges grouped by debtor."""
        order = np.argsort(self.src, kind="stable")
        ptr = np.zeros(self.N + 1, dtype=np.int64)
        np.cumsum(self.out_deg, out=ptr[1:])
        return ptr, order

    def edge_types(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-edge (k, j): out-degree of the debtor, in-degree of the creditor."""
        return self.out_deg[self.src], self.in_deg[self.dst]

    def has_duplicates(self) -> bool:
        key = self.src * self.N + self.dst
        return np.unique(key).size != key.size

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    # -- file format -------------------------------------------------------

    def write(self, path) -> None:
        lines = [f"{FILE_MAGIC} {FILE_VERSION} N={self.N} L={self.L}"]
        lines += [f"{v} {w}" for v, w in zip(self.src.tolist(), self.dst.tolist())]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "Skeleton":
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 4 or header[0] != FILE_MAGIC:
                raise SkeletonFormatError(f"{path}: not a skeleton file")
            if header[1] != FILE_VERSION:
                raise SkeletonFormatError(f"{path}: unsupported version {header[1]!r}")
            try:
                N = int(header[2].removeprefix("N="))
                L = int(header[3].removeprefix("L="))
            except ValueError as exc:
                raise SkeletonFormatError(f"{path}: bad header") from exc
            body = np.loadtxt(fh, dtype=np.int64, ndmin=2) if L else np.zeros((0, 2), dtype=np.int64)
        if body.shape != (L, 2):
            raise SkeletonFormatError(f"{path}: header says L={L}, found {body.shape[0]} edges")
        return cls(N, body[:, 0], body[:, 1])


# --------------------------------------------------------------------------
# type laws


@dataclass(frozen=True, eq=False)
class NodeTypeLaw:
    """P[j, k] = probability that a node has in-degree j and out-degree k."""

    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("P must be a square (K+1, K+1) array")
        if np.any(P < 0) or abs(P.sum() - 1) > 1e-12:
            raise ValueError("P must be a probability table")
        object.__setattr__(self, "P", P)

    @property
    def K(self) -> int:
        return self.P.shape[0] - 1

    @property
    def in_marginal(self) -> np.ndarray:  # P^-_j
        return self.P.sum(axis=1)

    @property
    def out_marginal(self) -> np.ndarray:  # P^+_k
        return self.P.sum(axis=0)

    @property
    def z(self) -> float:
        return float(np.arange(self.K + 1) @ self.in_marginal)

    @classmethod
    def from_triples(cls, K: int, triples) -> "NodeTypeLaw":
        P = np.zeros((K + 1, K + 1))
        for j, k, p in triples:
            P[int(j), int(k)] += p
        return cls(P)


@dataclass(frozen=True, eq=False)
class EdgeTypeLaw:
    """Q[k, j] = probability that an edge has debtor out-degree k and creditor in-degree j."""

    Q: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError("Q must be a square (K+1, K+1) array")
        if np.any(Q < 0) or abs(Q.sum() - 1) > 1e-12:
            raise ValueError("Q must be a probability table")
        object.__setattr__(self, "Q", Q)

    @property
    def K(self) -> int:
        return self.Q.shape[0] - 1

    @property
    def out_marginal(self) -> np.ndarray:  # Q^+_k
        return self.Q.sum(axis=1)

    @property
    def in_marginal(self) -> np.ndarray:  # Q^-_j
        return self.Q.sum(axis=0)

    @classmethod
    def from_triples(cls, K: int, triples) -> "EdgeTypeLaw":
        Q = np.zeros((K + 1, K + 1))
        for k, j, p in triples:
            Q[int(k), int(j)] += p
        return cls(Q)

    @classmethod
    def independent(cls, P: NodeTypeLaw) -> "EdgeTypeLaw":
        """Non-assortative edge law Q = Q+ x Q- implied by P."""
        deg = np.arange(P.K + 1)
        z = P.z
        q_out = deg * P.out_marginal / z
        q_in = deg * P.in_marginal / z
        Q = np.outer(q_out, q_in)
        return cls(Q / Q.sum())


@dataclass(frozen=True)
class ConsistencyReport:
    consistent: bool
    z: float
    max_violation: float


def check_consistency(P: NodeTypeLaw, Q: EdgeTypeLaw, tol: float = 1e-9) -> ConsistencyReport:
    """Equal mean in/out degree, and edge marginals equal size-biased node marginals."""
    if P.K != Q.K:
        raise ValueError(f"degree caps differ: {P.K} vs {Q.K}")
    deg = np.arange(P.K + 1)
    z_in = float(deg @ P.in_marginal)
    z_out = float(deg @ P.out_marginal)
    viol = abs(z_in - z_out)
    z = 0.5 * (z_in + z_out)
    if z > 0:
        viol = max(
            viol,
            float(np.max(np.abs(Q.out_marginal - deg * P.out_marginal / z))),
            float(np.max(np.abs(Q.in_marginal - deg * P.in_marginal / z))),
        )
    return ConsistencyReport(viol <= tol, z, viol)


def poisson_law(z: float, K: int) -> NodeTypeLaw:
    """Product of independent Poisson(z) in/out degrees, truncated at K and renormalised."""
    marg = poisson.pmf(np.arange(K + 1), z)
    marg /= marg.sum()
    return NodeTypeLaw(np.outer(marg, marg))


# --------------------------------------------------------------------------
# generators


def poisson_skeleton(N: int, z: float, seed) -> Skeleton:
    """Each of the N(N-1) ordered pairs is an edge independently with prob z/(N-1).

    Sampled as a Binomial edge count followed by a uniform draw of that many
    distinct ordered pairs, which has the same law.
    """
    if not 0 < z < N - 1:
        raise ValueError("need 0 < z < N-1")
    rng = np.random.default_rng(seed)
    n_pairs = N * (N - 1)
    L = int(rng.binomial(n_pairs, z / (N - 1)))
    keys = np.empty(0, dtype=np.int64)
    while keys.size < L:
        extra = rng.integers(0, n_pairs, size=int((L - keys.size) * 1.1) + 16)
        keys = np.unique(np.concatenate([keys, extra]))
    if keys.size > L:
        keys = rng.choice(keys, size=L, replace=False)
    keys = np.sort(keys)
    # pair index -> (v, w) with w != v: row v has N-1 slots skipping the diagonal
    v = keys // (N - 1)
    w = keys % (N - 1)
    w = w + (w >= v)
    return Skeleton(N, v, w)


def configuration_skeleton(
    P: NodeTypeLaw, N: int, seed, max_balance_tries: int = 100_000, max_rewire: int = 100
) -> Skeleton:
    """Stub-matched directed configuration graph with i.i.d. bi-degrees from P.

    Degree draws are repeated until total in- and out-degree agree, then
    in-stubs are matched to out-stubs uniformly.  A self-loop or repeated edge
    is re-wired by swapping its in-stub with a random other edge (up to
    ``max_rewire`` tries), otherwise dropped; the drop count is logged and
    stored on the returned skeleton as ``dropped``.
    """
    rng = np.random.default_rng(seed)
    K = P.K
    flat = P.P.ravel()
    for _ in range(max_balance_tries):
        idx = rng.choice(flat.size, size=N, p=flat)
        j, k = np.divmod(idx, K + 1)
        if j.sum() == k.sum():
            break
    else:
        raise BalanceError(f"in/out degree totals never balanced in {max_balance_tries} draws")
    src = np.repeat(np.arange(N), k)
    dst = rng.permutation(np.repeat(np.arange(N), j))
    L = src.size
    keep = np.ones(L, dtype=bool)
    dropped = 0
    if L:
        keys: dict[int, int] = {}
        for e in range(L):
            keys[int(src[e]) * N + int(dst[e])] = keys.get(int(src[e]) * N + int(dst[e]), 0) + 1

        def bad(e):
            return src[e] == dst[e] or keys[int(src[e]) * N + int(dst[e])] > 1

        def move(e, new_dst):
            old = int(src[e]) * N + int(dst[e])
            keys[old] -= 1
            dst[e] = new_dst
            key = int(src[e]) * N + int(new_dst)
            keys[key] = keys.get(key, 0) + 1

        for e in range(L):
            tries = 0
            while bad(e) and tries < max_rewire:
                f = int(rng.integers(L))
                tries += 1
                a, b = int(dst[e]), int(dst[f])
                if f == e or src[e] == b or src[f] == a:
                    continue
                if keys.get(int(src[e]) * N + b, 0) or keys.get(int(src[f]) * N + a, 0):
                    continue
                move(e, b)
                move(f, a)
            if bad(e):
                keep[e] = False
                keys[int(src[e]) * N + int(dst[e])] -= 1
                dropped += 1
    if dropped:
        log.warning("configuration_skeleton: dropped %d unfixable stub pairs", dropped)
    g = Skeleton(N, src[keep], dst[keep])
    object.__setattr__(g, "dropped", dropped)
    return g


def pareto_exponents(alpha: float, gamma: float, delta_in: float, delta_out: float) -> tuple[float, float]:
    """Tail exponents (tau_in, tau_out) of the directed preferential-attachment model."""
    beta = 1.0 - alpha - gamma
    tau_in = 1.0 + (1.0 + delta_in * (alpha + gamma)) / (alpha + beta)
    tau_out = 1.0 + (1.0 + delta_out * (alpha + gamma)) / (gamma + beta)
    return tau_in, tau_out


def preferential_attachment(
    N_target: int, alpha: float, gamma: float, delta_in: float, delta_out: float, seed
) -> Skeleton:
    """Grow a directed scale-free graph from a 3-cycle until it has N_target nodes.

    Each step, with probability alpha a new node gets an edge to an existing
    node chosen with weight in-degree + delta_in; with probability gamma an
    existing node chosen with weight out-degree + delta_out gets an edge to a
    new node; otherwise an edge joins two existing nodes chosen by those same
    weights (a draw that would give a self-loop or a parallel edge is redrawn).
    """
    if alpha < 0 or gamma < 0 or alpha + gamma > 1 or alpha + gamma == 0:
        raise ValueError("need alpha, gamma >= 0 with 0 < alpha + gamma <= 1")
    if delta_in <= 0 or delta_out <= 0:
        raise ValueError("delta_in and delta_out must be positive")
    if N_target < 3:
        raise ValueError("N_target must be at least 3 (seed graph)")
    rng = np.random.default_rng(seed)
    expected_steps = (N_target - 3) / (alpha + gamma)
    rows = int(3 * expected_steps) + 1000
    while True:
        u = rng.random((rows, 3))
        src, dst, n = _kernels.grow_pa(N_target, alpha, gamma, delta_in, delta_out, u, rows + 3)
        if n >= N_target:
            return Skeleton(N_target, src, dst)
        rows *= 2


def top_connected_subnetwork(g: Skeleton, m: int) -> tuple[Skeleton, np.ndarray]:
    """Subgraph induced by the m nodes of largest total degree.

    Ties go to the smaller node id.  Returns the relabelled skeleton and the
    array mapping new ids to original ids.
    """
    if not 0 <= m <= g.N:
        raise ValueError("need 0 <= m <= N")
    total = g.in_deg + g.out_deg
    order = np.lexsort((np.arange(g.N), -total))
    keep = np.sort(order[:m])
    new_id = np.full(g.N, -1, dtype=np.int64)
    new_id[keep] = np.arange(m)
    mask = (new_id[g.src] >= 0) & (new_id[g.dst] >= 0)
    return Skeleton(m, new_id[g.src[mask]], new_id[g.dst[mask]]), keep


def empirical_laws(g: Skeleton, K: int | None = None) -> tuple[NodeTypeLaw, EdgeTypeLaw]:
    """Observed node-type and edge-type frequencies; degrees above K are clamped."""
    if g.N == 0 or g.L == 0:
        raise ValueError("empirical laws need a non-empty graph")
    jin, kout = g.in_deg, g.out_deg
    if K is None:
        K = int(max(jin.max(), kout.max()))
    clamped = int(np.sum((jin > K) | (kout > K)))
    if clamped:
        log.warning("empirical_laws: %d nodes have degree above K=%d and are clamped", clamped, K)
    jc, kc = np.minimum(jin, K), np.minimum(kout, K)
    P = np.zeros((K + 1, K + 1))
    np.add.at(P, (jc, kc), 1.0)
    ek, ej = g.edge_types()
    Q = np.zeros((K + 1, K + 1))
    np.add.at(Q, (np.minimum(ek, K), np.minimum(ej, K)), 1.0)
    return NodeTypeLaw(P / g.N), EdgeTypeLaw(Q / g.L)


def realized_mean_degree(g: Skeleton) -> float:
    return g.L / g.N if g.N else math.nan
