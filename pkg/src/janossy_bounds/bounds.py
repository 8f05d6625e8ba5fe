"""Closed-form latent-dimension bounds and the known-bounds table.

Everything here is integer arithmetic; ``(d(n-k)+1)^{1/k}`` is never formed
in floating point.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

KNOWN_UPPER_SOURCES = {
    "zaheer": "d=1, k=1: M_univ <= n+1",
    "wagstaff": "d=1, k=1: M_univ <= n (and >= n)",
    "dym-gortler": "d>=1, k=1: M_univ <= 2nd+1",
    "murphy": "k=n: M_univ = 1",
    "inherited-deep-sets": "1<k<n: Deep Sets upper bound carries over to k-ary Janossy",
}

# Bump BOUNDS_CSV_VERSION whenever BOUNDS_CSV_COLUMNS changes.
BOUNDS_CSV_VERSION = 1
BOUNDS_CSV_COLUMNS = ["d", "n", "k", "lower_indexed", "trivial_p1", "upper_known", "source"]


def _check_dims(d: int, n: int, k: int):
    if d < 1 or n < 2 or k < 1:
        raise ValueError(f"Need d >= 1, n >= 2, k >= 1, got d={d}, n={n}, k={k}")
    if k >= n:
        raise ValueError(f"The indexed bound needs k < n, got k={k}, n={n}")


def grid_size(d: int, n: int, k: int) -> int:
    """Smallest ``s`` with ``s^k >= d(n-k) + 1``."""
    _check_dims(d, n, k)
    target = d * (n - k) + 1
    s = 1
    while s**k < target:
        s += 1
    return s


def axis_cardinality(s: int, k: int) -> int:
    return s**k - (s - 1) ** k


def indexed_lower_bound(d: int, n: int, k: int) -> int:
    s = grid_size(d, n, k)
    numerator = d * (n - k)
    denominator = axis_cardinality(s, k)
    return -(-numerator // denominator)


def shared_janossy_lower_bound(d: int, n: int, k: int) -> int:
    # Shared encoders restrict to indexed ones on the labeled copy, so the bound carries over unchanged.
    return indexed_lower_bound(d, n, k)


def deep_sets_lower_bound(d: int, n: int) -> int:
    return indexed_lower_bound(d, n, 1)


def trivial_bound(d: int, n: int, p: Optional[int] = None) -> int:
    """``min(p, nd)``; ``p=None`` is the fixed-feature case ``M >= nd``."""
    if d < 1 or n < 1 or (p is not None and p < 1):
        raise ValueError(f"Need d, n, p >= 1, got d={d}, n={n}, p={p}")
    if p is None:
        return n * d
    return min(p, n * d)


def known_upper_bounds(d: int, n: int, k: int) -> dict[str, int]:
    uppers = {}
    if k == n:
        uppers["murphy"] = 1
    if k == 1 and d == 1:
        uppers["zaheer"] = n + 1
        uppers["wagstaff"] = n
    if k == 1:
        uppers["dym-gortler"] = 2 * n * d + 1
    if 1 < k < n:
        uppers["inherited-deep-sets"] = n if d == 1 else 2 * n * d + 1
    return uppers


@dataclass(frozen=True)
class BoundsRow:
    d: int
    n: int
    k: int
    p: int
    lower_bound_indexed: int
    lower_bound_deepsets: Optional[int]
    trivial_bound: int
    known_upper: Optional[int]
    source: str = ""
    known_lower: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "k": self.k,
            "lower_indexed": self.lower_bound_indexed,
            "trivial_p1": trivial_bound(self.d, self.n, 1),
            "upper_known": self.known_upper,
            "source": self.source,
        }


def bounds_row(d: int, n: int, k: int, p: int = 1) -> BoundsRow:
    if k > n:
        raise ValueError(f"k must not exceed n, got k={k}, n={n}")
    if k == n:
        lower = 1
    else:
        lower = indexed_lower_bound(d, n, k)

    uppers = known_upper_bounds(d, n, k)
    if uppers:
        best = min(uppers.values())
        source = "+".join(sorted(name for name, value in uppers.items() if value == best))
    else:
        best, source = None, ""

    return BoundsRow(
        d=d,
        n=n,
        k=k,
        p=p,
        lower_bound_indexed=lower,
        lower_bound_deepsets=d * (n - 1) if k == 1 else None,
        trivial_bound=trivial_bound(d, n, p),
        known_upper=best,
        source=source,
        known_lower=n if (d == 1 and k == 1) else (1 if k == n else None),
    )


def bounds_table(d_values: Iterable[int], n_values: Iterable[int], k_values: Iterable[int], p: int = 1) -> list[BoundsRow]:
    """One row per ``(d, n, k)`` with ``k <= n``; rows with ``k > n`` are skipped."""
    rows = []
    for d in d_values:
        for n in n_values:
            for k in k_values:
                if k > n:
                    continue
                rows.append(bounds_row(d, n, k, p))
    return rows


@dataclass
class AsymptoticReport:
    k: int
    count: int
    min_ratio: float
    max_ratio: float
    argmin: tuple
    proof_floor: float
    dominates_proof_floor: bool
    bounded_below: bool
    ratios: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("ratios")
        return data


def asymptotic_constant_check(k: int, d_values: Iterable[int], n_values: Iterable[int]) -> AsymptoticReport:
    """Ratio ``indexed_lower_bound / (d(n-k))^{1/k}`` over a range.

    The proof's floor per point is ``d(n-k) / (k s^{k-1})`` (from
    ``s^k - (s-1)^k <= k s^{k-1}``) divided by the same normaliser; the integer
    bound must dominate it everywhere.
    """
    ratios = []
    floors = []
    for d in d_values:
        for n in n_values:
            if k >= n:
                continue
            dim = d * (n - k)
            scale = dim ** (1.0 / k)
            s = grid_size(d, n, k)
            ratios.append(((d, n), indexed_lower_bound(d, n, k) / scale))
            floors.append(dim / (k * s ** (k - 1)) / scale)

    if not ratios:
        raise ValueError(f"No (d, n) pairs with n > k={k} in the requested range.")

    argmin, min_ratio = min(ratios, key=lambda item: item[1])
    max_ratio = max(r for _, r in ratios)
    return AsymptoticReport(
        k=k,
        count=len(ratios),
        min_ratio=min_ratio,
        max_ratio=max_ratio,
        argmin=argmin,
        proof_floor=min(floors),
        dominates_proof_floor=all(r >= f - 1e-12 for (_, r), f in zip(ratios, floors)),
        bounded_below=min_ratio > 0.0,
        ratios=ratios,
    )


def monotonicity_report(k: int, d_values: Iterable[int], n_values: Iterable[int]) -> dict:
    """Observed drops of the indexed bound along ``d`` and along ``n``."""
    d_list = sorted(d_values)
    n_list = sorted(n for n in n_values if n > k)
    violations = []
    for d in d_list:
        previous = None
        for n in n_list:
            value = indexed_lower_bound(d, n, k)
            if previous is not None and value < previous[1]:
                violations.append({"axis": "n", "d": d, "from": previous[0], "to": n, "drop": previous[1] - value})
            previous = (n, value)
    for n in n_list:
        previous = None
        for d in d_list:
            value = indexed_lower_bound(d, n, k)
            if previous is not None and value < previous[1]:
                violations.append({"axis": "d", "n": n, "from": previous[0], "to": d, "drop": previous[1] - value})
            previous = (d, value)
    return {"k": k, "checked": len(d_list) * len(n_list), "violations": violations}
