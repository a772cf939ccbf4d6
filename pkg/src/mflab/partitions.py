"""Set-partition combinatorics and the moment/cumulant/correlation transforms.

Everything here is exact integer/float combinatorics plus unbiased estimation
from samples.  The finite-alphabet exchangeable-law oracle at the bottom exists
to certify the identities on small cases, not to scale.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SetPartition",
    "CumulantTable",
    "enumerate_partitions",
    "partitions_of",
    "bell_number",
    "cumulants_from_moments",
    "moments_from_cumulants",
    "joint_cumulant",
    "total_cumulance",
    "correlations_from_marginals",
    "marginals_from_correlations",
    "empirical_cumulant_from_pairings",
    "empirical_pairing_identity",
    "pairing_coefficient",
    "k_statistics",
    "joint_k_statistic",
    "ExchangeableLaw",
]

MAX_PARTITION_N = 12


@dataclass(frozen=True)
class SetPartition:
    """A partition of {1..n} in canonical order (blocks sorted by least element)."""

    n: int
    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen = set()
        for block in self.blocks:
            if not block or tuple(sorted(block)) != block:
                raise ValueError(f"block {block} not sorted/nonempty")
            if seen & set(block):
                raise ValueError("blocks not disjoint")
            seen |= set(block)
        if seen != set(range(1, self.n + 1)):
            raise ValueError("blocks do not cover {1..n}")
        if list(self.blocks) != sorted(self.blocks, key=lambda b: b[0]):
            raise ValueError("blocks not in canonical order")

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def block_sizes(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.blocks)


def partitions_of(items: tuple) -> list[tuple[tuple, ...]]:
    """All partitions of an ordered tuple of distinct items, canonical order.

    Blocks are tuples keeping the input order; blocks are ordered by their
    first item.  Grows like the Bell numbers.
    """
    if not items:
        return [()]
    first, rest = items[0], items[1:]
    out = []
    for sub in partitions_of(rest):
        # first joins an existing block or starts its own
        for i in range(len(sub)):
            out.append(((first,) + sub[i],) + sub[:i] + sub[i + 1:])
        out.append(((first,),) + sub)
    # restore canonical order (first item of each block ascending)
    return [tuple(sorted(p, key=lambda b: items.index(b[0]))) for p in out]


def enumerate_partitions(n: int) -> list[SetPartition]:
    """All set partitions of {1..n}, each exactly once, canonical order."""
    if not 1 <= n <= MAX_PARTITION_N:
        raise ValueError(f"n={n} outside supported range 1..{MAX_PARTITION_N}")
    raw = partitions_of(tuple(range(1, n + 1)))
    parts = [SetPartition(n, p) for p in raw]
    parts.sort(key=lambda p: p.blocks)
    return parts


def bell_number(n: int) -> int:
    """Bell number via the binomial recursion B(n+1) = sum C(n,k) B(k)."""
    b = [1]
    for m in range(n):
        b.append(sum(math.comb(m, k) * b[k] for k in range(m + 1)))
    return b[n]


@dataclass
class CumulantTable:
    """Cumulants kappa^1..kappa^m, exact or estimated with standard errors."""

    order: int
    values: np.ndarray
    provenance: str = "exact"  # "exact" | "estimated"
    stderr: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.order,):
            raise ValueError("values must have shape (order,)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite cumulant")
        if self.provenance == "estimated":
            if self.stderr is None or np.asarray(self.stderr).shape != (self.order,):
                raise ValueError("estimated tables carry a stderr per order")
            self.stderr = np.asarray(self.stderr, dtype=float)

    def kappa(self, j: int) -> float:
        return float(self.values[j - 1])


# ---------------------------------------------------------------------------
# moment <-> cumulant transforms
# ---------------------------------------------------------------------------

def _mobius_coeff(num_blocks: int) -> float:
    return (-1.0) ** (num_blocks - 1) * math.factorial(num_blocks - 1)


def cumulants_from_moments(moments) -> CumulantTable:
    """kappa^m = sum over partitions of (-1)^(#pi-1) (#pi-1)! prod_A E[X^#A].

    `moments[k-1]` must be E[X^k] for k = 1..m.
    """
    moments = np.asarray(moments, dtype=float)
    m = len(moments)
    kappas = np.empty(m)
    for order in range(1, m + 1):
        total = 0.0
        for part in enumerate_partitions(order):
            prod = 1.0
            for block in part.blocks:
                prod *= moments[len(block) - 1]
            total += _mobius_coeff(part.num_blocks) * prod
        kappas[order - 1] = total
    return CumulantTable(order=m, values=kappas)


def moments_from_cumulants(cumulants) -> np.ndarray:
    """Cluster expansion E[X^m] = sum over partitions of prod_A kappa^#A."""
    if isinstance(cumulants, CumulantTable):
        cumulants = cumulants.values
    cumulants = np.asarray(cumulants, dtype=float)
    m = len(cumulants)
    moments = np.empty(m)
    for order in range(1, m + 1):
        total = 0.0
        for part in enumerate_partitions(order):
            prod = 1.0
            for block in part.blocks:
                prod *= cumulants[len(block) - 1]
            total += prod
        moments[order - 1] = total
    return moments


def joint_cumulant(joint_moments: dict) -> float:
    """Joint cumulant kappa[X_1..X_m] from joint moments of all subsets.

    `joint_moments` maps each nonempty subset S of {1..m} (any iterable of
    indices) to E[prod_{i in S} X_i]; m is the size of the largest key.
    """
    table = {frozenset(k): float(v) for k, v in joint_moments.items()}
    m = max(max(k) for k in table)
    full = frozenset(range(1, m + 1))
    total = 0.0
    for part in enumerate_partitions(m):
        prod = 1.0
        for block in part.blocks:
            key = frozenset(block)
            if key not in table:
                raise KeyError(f"missing joint moment for subset {sorted(key)}")
            prod *= table[key]
        total += _mobius_coeff(part.num_blocks) * prod
    if full not in table:
        raise KeyError("missing joint moment for the full index set")
    return total


def _weighted_joint_cumulant(rows: np.ndarray, weights: np.ndarray) -> float:
    """Exact joint cumulant of finitely supported random variables.

    rows[i] holds the values of X_i on the atoms, weights the atom masses.
    """
    m = rows.shape[0]
    moments = {}
    for r in range(1, m + 1):
        for subset in itertools.combinations(range(1, m + 1), r):
            prod = np.ones_like(weights)
            for i in subset:
                prod = prod * rows[i - 1]
            moments[frozenset(subset)] = float(np.dot(weights, prod))
    return joint_cumulant(moments)


def total_cumulance(inner_values, outer_weights=None) -> float:
    """Law of total cumulance over a finite outer space.

    kappa^m[X] = sum over partitions pi of kappa_outer^{#pi} of the family
    (kappa_inner^{#A}[X])_{A in pi}.

    `inner_values[j-1]` is the array of kappa_inner^j[X] over the outer atoms,
    j = 1..m; `outer_weights` are the atom probabilities (uniform if omitted,
    i.e. Monte Carlo samples of the outer randomness).
    """
    inner = np.asarray(inner_values, dtype=float)
    if inner.ndim != 2:
        raise ValueError("inner_values must be (m, n_outer)")
    m, n_outer = inner.shape
    if outer_weights is None:
        weights = np.full(n_outer, 1.0 / n_outer)
    else:
        weights = np.asarray(outer_weights, dtype=float)
        if weights.shape != (n_outer,):
            raise ValueError("outer_weights length mismatch with inner arrays")
    total = 0.0
    for part in enumerate_partitions(m):
        rows = np.stack([inner[len(block) - 1] for block in part.blocks])
        total += _weighted_joint_cumulant(rows, weights)
    return total


# ---------------------------------------------------------------------------
# marginals <-> correlation functions on a finite state space
# ---------------------------------------------------------------------------

def _check_symmetric(tensor: np.ndarray):
    j = tensor.ndim
    for perm in itertools.permutations(range(j)):
        if not np.allclose(tensor, tensor.transpose(perm), atol=1e-12):
            raise ValueError("input tensor is not symmetric under index permutations")


def _partition_product(tensors: list[np.ndarray], part: SetPartition, q: int) -> np.ndarray:
    """Tensor prod_A T^{#A}(z_A) with output axes ordered z_1..z_m."""
    m = part.n
    letters = "abcdefghijkl"
    subs = []
    ops = []
    for block in part.blocks:
        subs.append("".join(letters[i - 1] for i in block))
        ops.append(tensors[len(block) - 1])
    out = "".join(letters[:m])
    return np.einsum(",".join(subs) + "->" + out, *ops)


def correlations_from_marginals(marginals: list[np.ndarray]) -> list[np.ndarray]:
    """Moebius transform of marginals into correlation functions.

    G^m = sum over partitions of (#pi-1)! (-1)^(#pi-1) prod_A F^{#A}(z_A),
    so that G^2 = F^2 - F^1 (x) F^1 and products of independent marginals give
    G^j = 0 for j >= 2.
    """
    marginals = [np.asarray(f, dtype=float) for f in marginals]
    q = marginals[0].shape[0]
    for j, f in enumerate(marginals, start=1):
        if f.shape != (q,) * j:
            raise ValueError(f"marginal order {j} has wrong shape {f.shape}")
        _check_symmetric(f)
    out = []
    for order in range(1, len(marginals) + 1):
        total = np.zeros((q,) * order)
        for part in enumerate_partitions(order):
            total += _mobius_coeff(part.num_blocks) * _partition_product(marginals, part, q)
        out.append(total)
    return out


def marginals_from_correlations(correlations: list[np.ndarray]) -> list[np.ndarray]:
    """Cluster expansion F^m = sum over partitions of prod_A G^{#A}(z_A)."""
    correlations = [np.asarray(g, dtype=float) for g in correlations]
    q = correlations[0].shape[0]
    out = []
    for order in range(1, len(correlations) + 1):
        total = np.zeros((q,) * order)
        for part in enumerate_partitions(order):
            total += _partition_product(correlations, part, q)
        out.append(total)
    return out


# ---------------------------------------------------------------------------
# cumulants of the empirical measure vs correlation pairings
# ---------------------------------------------------------------------------

def pairing_coefficient(rho_sizes: tuple[int, ...], N: int) -> float:
    """Coefficient K_N(rho) for a partition rho of the blocks of pi.

    `rho_sizes[d]` is the number of pi-blocks inside the d-th block of rho.
    K_N(rho) = sum over partitions sigma of rho's blocks of
    (-1)^(#sigma-1) (#sigma-1)! prod_C prod_{j<n_C} (1 - j/N),
    with n_C the total number of pi-blocks merged in C.
    """
    r = len(rho_sizes)
    total = 0.0
    for sigma in enumerate_partitions(r):
        prod = 1.0
        for block in sigma.blocks:
            n_c = sum(rho_sizes[d - 1] for d in block)
            for j in range(1, n_c):
                prod *= 1.0 - j / N
        total += _mobius_coeff(sigma.num_blocks) * prod
    return total


def _identity_terms(m: int):
    """All (pi, rho) terms of the empirical-cumulant identity at order m.

    Yields (pi, rho) where rho is a partition of pi's blocks, each rho-block
    given as a tuple of pi-blocks.
    """
    for pi in enumerate_partitions(m):
        for rho in partitions_of(pi.blocks):
            yield pi, rho


def _block_powers(d_block, slot_powers) -> tuple[int, ...]:
    """Pairing signature of a rho-block: each pi-block merges its slots into
    one test function phi^(sum of slot powers)."""
    return tuple(sorted(sum(slot_powers[i - 1] for i in b) for b in d_block))


def empirical_cumulant_from_pairings(m: int, N: int, pairing,
                                     slot_powers=None) -> float:
    """Forward identity: joint cumulant of (<phi^p_i, mu^N>)_i from pairings.

    kappa = sum over pi of N^(#pi - m) sum over rho of K_N(rho) *
    prod_{D in rho} pairing(powers of D), where pairing(p_1..p_j) returns
    the integral of phi^{p_1} (x) ... (x) phi^{p_j} against G^{j,N}.
    The default slot_powers (1,..,1) gives kappa^m[<phi, mu^N>].
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if N < m:
        raise ValueError(f"identity needs N >= m (got N={N}, m={m})")
    slot_powers = tuple(slot_powers) if slot_powers else (1,) * m
    if len(slot_powers) != m:
        raise ValueError("slot_powers length mismatch")
    total = 0.0
    for pi, rho in _identity_terms(m):
        rho_sizes = tuple(len(d) for d in rho)
        coeff = N ** (pi.num_blocks - m) * pairing_coefficient(rho_sizes, N)
        prod = 1.0
        for d_block in rho:
            prod *= pairing(_block_powers(d_block, slot_powers))
        total += coeff * prod
    return total


def empirical_pairing_identity(kappa_value: float, kappa_stderr: float, m: int,
                               N: int, pairing_with_err,
                               slot_powers=None) -> tuple[float, float]:
    """Solve the order-m identity for the top pairing against G^{m,N}.

    `pairing_with_err(powers)` must return (value, stderr) for every pairing
    of order < m, and also for mixed-power pairings of order m other than the
    top one; the top pairing (powers = sorted slot_powers against G^{m,N}) is
    the unknown.  Standard errors are propagated linearly.
    """
    if m < 1 or N < m:
        raise ValueError(f"identity needs N >= m >= 1 (got N={N}, m={m})")
    slot_powers = tuple(slot_powers) if slot_powers else (1,) * m
    top_powers = tuple(sorted(slot_powers))
    top_coeff = None
    known = 0.0
    known_var = kappa_stderr ** 2
    for pi, rho in _identity_terms(m):
        rho_sizes = tuple(len(d) for d in rho)
        coeff = N ** (pi.num_blocks - m) * pairing_coefficient(rho_sizes, N)
        powers_per_block = [_block_powers(d, slot_powers) for d in rho]
        if len(rho) == 1 and pi.num_blocks == m and powers_per_block[0] == top_powers:
            top_coeff = coeff
            continue
        vals, errs = zip(*(pairing_with_err(p) for p in powers_per_block))
        prod = float(np.prod(vals))
        known += coeff * prod
        # linear error propagation through the product
        for i, (v, e) in enumerate(zip(vals, errs)):
            rest = float(np.prod([vals[j] for j in range(len(vals)) if j != i]))
            known_var += (coeff * rest * e) ** 2
    top = (kappa_value - known) / top_coeff
    return top, math.sqrt(known_var) / abs(top_coeff)


# ---------------------------------------------------------------------------
# unbiased cumulant estimation from samples
# ---------------------------------------------------------------------------

def _univariate_kstats(x: np.ndarray):
    """Fisher k-statistics k1..k4 from power sums; vectorized over leading axes.

    x has shape (..., n); returns array (..., 4).
    """
    n = x.shape[-1]
    s1 = x.sum(-1)
    s2 = (x ** 2).sum(-1)
    s3 = (x ** 3).sum(-1)
    s4 = (x ** 4).sum(-1)
    k1 = s1 / n
    k2 = (n * s2 - s1 ** 2) / (n * (n - 1))
    k3 = (2 * s1 ** 3 - 3 * n * s1 * s2 + n ** 2 * s3) / (n * (n - 1) * (n - 2))
    k4 = (-6 * s1 ** 4 + 12 * n * s1 ** 2 * s2 - 3 * n * (n - 1) * s2 ** 2
          - 4 * n * (n + 1) * s1 * s3 + n ** 2 * (n + 1) * s4) / (
              n * (n - 1) * (n - 2) * (n - 3))
    return np.stack([k1, k2, k3, k4], axis=-1)


def k_statistics(samples, m: int) -> CumulantTable:
    """Unbiased k-statistics of order 1..m with delete-1 jackknife errors."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1:
        raise ValueError("samples must be a 1-d array")
    if m > 4:
        raise ValueError("estimation capped at order 4")
    n = len(x)
    if n <= max(m, 4):
        raise ValueError(f"need more than {max(m, 4)} samples, got {n}")
    full = _univariate_kstats(x)[:m]

    # leave-one-out via power-sum downdates
    powers = np.stack([x, x ** 2, x ** 3, x ** 4])        # (4, n)
    s_full = powers.sum(axis=1, keepdims=True)             # (4, 1)
    s1, s2, s3, s4 = s_full - powers                       # each (n,) after broadcast
    nm = n - 1
    loo = np.stack([
        s1 / nm,
        (nm * s2 - s1 ** 2) / (nm * (nm - 1)),
        (2 * s1 ** 3 - 3 * nm * s1 * s2 + nm ** 2 * s3) / (nm * (nm - 1) * (nm - 2)),
        (-6 * s1 ** 4 + 12 * nm * s1 ** 2 * s2 - 3 * nm * (nm - 1) * s2 ** 2
         - 4 * nm * (nm + 1) * s1 * s3 + nm ** 2 * (nm + 1) * s4) / (
             nm * (nm - 1) * (nm - 2) * (nm - 3)),
    ], axis=-1)[:, :m]                                     # (n, m)
    se = np.sqrt((n - 1) / n * ((loo - loo.mean(0)) ** 2).sum(0))
    return CumulantTable(order=m, values=full, provenance="estimated", stderr=se)


def _distinct_product_sums(block_values: tuple, cache: dict) -> np.ndarray | float:
    """Sum over assignments of *distinct* sample indices to the given blocks.

    `block_values` is a tuple of hashable keys; `cache['S']` maps a key to the
    plain sum over samples of that block's per-sample values, and
    `cache['merge']` merges keys (pointwise product of the value arrays).
    Uses prod_A S_A = sum over partitions tau of the blocks of D(merged tau).
    """
    key = tuple(sorted(tuple(sorted(b)) for b in block_values))
    if key in cache["D"]:
        return cache["D"][key]
    prod = 1.0
    for b in block_values:
        prod = prod * cache["S"][b]
    result = prod
    if len(block_values) > 1:
        for tau in partitions_of(tuple(range(len(block_values)))):
            if len(tau) == len(block_values):
                continue  # the all-singletons partition is the target itself
            merged = tuple(cache["merge"](tuple(block_values[i] for i in cls))
                           for cls in tau)
            result = result - _distinct_product_sums(merged, cache)
    cache["D"][key] = result
    return result


def joint_k_statistic(arrays, return_stderr: bool = False):
    """Unbiased estimate of the joint cumulant kappa[X_1..X_m], m <= 4.

    Each product moment over partition blocks is estimated by the U-statistic
    over distinct sample indices, then combined by Moebius inversion; for
    identical arguments this reduces exactly to the Fisher k-statistic.
    Optional delete-1 jackknife standard error.
    """
    xs = [np.asarray(a, dtype=float) for a in arrays]
    m = len(xs)
    if m > 4:
        raise ValueError("estimation capped at order 4")
    n = len(xs[0])
    if any(len(a) != n for a in xs):
        raise ValueError("sample arrays must share a length")
    if n <= m:
        raise ValueError("need more samples than the cumulant order")

    subset_vals = {}
    for r in range(1, m + 1):
        for subset in itertools.combinations(range(1, m + 1), r):
            prod = np.ones(n)
            for i in subset:
                prod = prod * xs[i - 1]
            subset_vals[frozenset(subset)] = prod

    def merge(keys):
        out = frozenset()
        for k in keys:
            out = out | k
        return out

    def estimate(sums, size):
        cache = {"S": sums, "merge": merge, "D": {}}
        total = 0.0
        for part in enumerate_partitions(m):
            blocks = tuple(frozenset(b) for b in part.blocks)
            d = _distinct_product_sums(blocks, cache)
            falling = math.prod(size - j for j in range(part.num_blocks))
            total = total + _mobius_coeff(part.num_blocks) * d / falling
        return total

    sums_full = {k: v.sum() for k, v in subset_vals.items()}
    value = float(estimate(sums_full, n))
    if not return_stderr:
        return value
    sums_loo = {k: v.sum() - v for k, v in subset_vals.items()}  # arrays (n,)
    loo = estimate(sums_loo, n - 1)
    se = float(np.sqrt((n - 1) / n * ((loo - loo.mean()) ** 2).sum()))
    return value, se


# ---------------------------------------------------------------------------
# finite exchangeable-law oracle
# ---------------------------------------------------------------------------

class ExchangeableLaw:
    """Exact exchangeable law of N particles on a finite alphabet.

    Exists solely to certify the partition identities: everything is dense
    enumeration over the q^N configurations.
    """

    def __init__(self, joint: np.ndarray):
        joint = np.asarray(joint, dtype=float)
        self.N = joint.ndim
        self.q = joint.shape[0]
        if joint.shape != (self.q,) * self.N:
            raise ValueError("joint tensor must be q^N")
        if np.any(joint < -1e-15):
            raise ValueError("negative probability")
        _check_symmetric(joint)
        self.joint = joint / joint.sum()
        # all configurations as an integer array (q^N, N)
        self.configs = np.stack(np.meshgrid(*[np.arange(self.q)] * self.N,
                                            indexing="ij"), axis=-1).reshape(-1, self.N)
        self.weights = self.joint.reshape(-1)

    @classmethod
    def random(cls, q: int, N: int, rng) -> "ExchangeableLaw":
        """Random exchangeable law: symmetrized positive tensor."""
        raw = rng.random((q,) * N) + 0.05
        sym = np.zeros_like(raw)
        for perm in itertools.permutations(range(N)):
            sym += raw.transpose(perm)
        return cls(sym)

    @classmethod
    def product(cls, single: np.ndarray, N: int) -> "ExchangeableLaw":
        single = np.asarray(single, dtype=float)
        joint = single.copy()
        for _ in range(N - 1):
            joint = np.multiply.outer(joint, single)
        return cls(joint)

    def marginal(self, m: int) -> np.ndarray:
        if m > self.N:
            raise ValueError("marginal order exceeds N")
        axes = tuple(range(m, self.N))
        return self.joint.sum(axis=axes) if axes else self.joint.copy()

    def correlation_functions(self, m: int) -> list[np.ndarray]:
        return correlations_from_marginals([self.marginal(j) for j in range(1, m + 1)])

    def empirical_moments(self, phi: np.ndarray, m: int) -> np.ndarray:
        """Exact E[<phi, mu^N>^j] for j = 1..m by enumeration."""
        phi = np.asarray(phi, dtype=float)
        vals = phi[self.configs].mean(axis=1)      # <phi, mu^N> per configuration
        return np.array([np.dot(self.weights, vals ** j) for j in range(1, m + 1)])

    def empirical_cumulants(self, phi: np.ndarray, m: int) -> CumulantTable:
        return cumulants_from_moments(self.empirical_moments(phi, m))

    def pairing(self, phi: np.ndarray, powers: tuple[int, ...]) -> float:
        """Exact integral of (x)_i phi^{p_i} against G^{j,N}, j = len(powers)."""
        phi = np.asarray(phi, dtype=float)
        j = len(powers)
        g = self.correlation_functions(j)[j - 1]
        for p in powers:
            g = np.tensordot(phi ** p, g, axes=(0, 0))
        return float(g)
