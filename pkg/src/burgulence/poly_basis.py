"""Integer linear forms whose m-th powers span homogeneous polynomials.

For each degree ``m`` and dimension ``d`` we build a deterministic set of
linear forms ``L_k = sum_i c_ki X_i`` with integer coefficients such that
``{L_k^m}`` is a basis of the homogeneous degree-``m`` polynomials in ``d``
variables.  Directional derivatives along these forms give norms that are
equivalent to the multi-index Sobolev norms (see
:func:`burgulence.torus.directional_norm`).

All linear algebra here is exact (:class:`fractions.Fraction`).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb, factorial, prod
from typing import Sequence


@dataclass(frozen=True)
class LinearForm:
    """The linear form ``sum_i coeffs[i] * X_{i+1}``."""

    coeffs: tuple[int, ...]

    def __post_init__(self):
        if not all(isinstance(c, int) for c in self.coeffs):
            raise TypeError("linear form coefficients must be integers")
        if not any(self.coeffs):
            raise ValueError("linear form must have a nonzero coefficient")

    @property
    def d(self) -> int:
        return len(self.coeffs)

    def __str__(self):
        return " ".join(str(c) for c in self.coeffs)


def monomials(m: int, d: int) -> list[tuple[int, ...]]:
    """Exponent tuples of degree ``m`` in ``d`` variables.

    Ordered so that ``X_1^m`` comes first and ``X_d^m`` last, which in two
    variables is ``X_1^m, X_1^{m-1} X_2, ..., X_2^m``.
    """
    out = []
    for combo in combinations_with_replacement(range(d), m):
        alpha = [0] * d
        for i in combo:
            alpha[i] += 1
        out.append(tuple(alpha))
    return out


def multinomial(alpha: Sequence[int]) -> int:
    return factorial(sum(alpha)) // prod(factorial(a) for a in alpha)


def power_row(form: LinearForm, m: int) -> list[int]:
    """Coefficients of ``form**m`` in the monomial basis of :func:`monomials`."""
    return [
        multinomial(alpha) * prod(c**a for c, a in zip(form.coeffs, alpha))
        for alpha in monomials(m, form.d)
    ]


def power_matrix(forms: Sequence[LinearForm], m: int) -> list[list[int]]:
    return [power_row(f, m) for f in forms]


def _eliminate(row, pivots):
    """Reduce ``row`` against the echelon rows in ``pivots`` (col -> row)."""
    row = list(row)
    for col, prow in pivots.items():
        if row[col]:
            factor = row[col]
            row = [a - factor * b for a, b in zip(row, prow)]
    return row


def exact_rank(rows: Sequence[Sequence[int | Fraction]]) -> int:
    pivots: dict[int, list[Fraction]] = {}
    for r in rows:
        red = _eliminate([Fraction(x) for x in r], pivots)
        for col, val in enumerate(red):
            if val:
                pivots[col] = [x / val for x in red]
                break
    return len(pivots)


def _invert(matrix: list[list[int]]) -> list[list[Fraction]]:
    n = len(matrix)
    aug = [[Fraction(x) for x in row] + [Fraction(int(i == j)) for j in range(n)]
           for i, row in enumerate(matrix)]
    for col in range(n):
        piv = next(r for r in range(col, n) if aug[r][col] != 0)
        aug[col], aug[piv] = aug[piv], aug[col]
        pv = aug[col][col]
        aug[col] = [x / pv for x in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[col])]
    return [row[n:] for row in aug]


@dataclass(frozen=True)
class DirectionBasis:
    """A spanning set of linear forms for degree ``m`` in ``d`` variables.

    ``expansion[i][k]`` is the coefficient of ``forms[k]**m`` in the
    expansion of the ``i``-th monomial of :func:`monomials`, so that
    ``expansion @ power_matrix(forms, m)`` is the identity.
    """

    m: int
    d: int
    forms: tuple[LinearForm, ...]
    expansion: tuple[tuple[Fraction, ...], ...]

    @property
    def dim(self) -> int:
        return comb(self.m + self.d - 1, self.d - 1)

    def power_matrix(self) -> list[list[int]]:
        return power_matrix(self.forms, self.m)

    def vectors(self) -> list[tuple[int, ...]]:
        return [f.coeffs for f in self.forms]


def _d2_forms(m: int) -> list[tuple[int, int]]:
    return [(1, j) for j in range(m + 1)]


def _candidates(m: int, d: int) -> list[tuple[int, ...]]:
    if d == 1:
        return [(1,)]
    if d == 2:
        return _d2_forms(m)
    # X_1^{m-n} P_n(X_2..X_d): expand P_n in n-th powers of the (d-1)-basis,
    # then treat (X_1, L) as two variables and use the d=2 family.
    family = [(1,) + (0,) * (d - 1)]
    for n in range(1, m + 1):
        for lower in _basis_forms(n, d - 1):
            for j in range(m + 1):
                family.append((1,) + tuple(j * c for c in lower))
    return family


@lru_cache(maxsize=None)
def _basis_forms(m: int, d: int) -> tuple[tuple[int, ...], ...]:
    """Greedy exact-rank pruning of the candidate family, in order."""
    target = comb(m + d - 1, d - 1)
    chosen: list[tuple[int, ...]] = []
    seen = set()
    pivots: dict[int, list[Fraction]] = {}
    for cand in _candidates(m, d):
        if cand in seen or not any(cand):
            continue
        seen.add(cand)
        red = _eliminate([Fraction(x) for x in power_row(LinearForm(cand), m)], pivots)
        col = next((c for c, v in enumerate(red) if v), None)
        if col is None:
            continue
        pivots[col] = [x / red[col] for x in red]
        chosen.append(cand)
        if len(chosen) == target:
            break
    if len(chosen) != target:  # pragma: no cover - the recursion always spans
        raise RuntimeError(f"failed to span degree {m} in {d} variables")
    return tuple(chosen)


def construct_basis(m: int, d: int) -> DirectionBasis:
    """Deterministic set of ``C(m+d-1, d-1)`` integer forms spanning degree ``m``.

    ``d=1`` gives ``{X_1}``, ``d=2`` gives ``{X_1, X_1+X_2, ..., X_1+m X_2}``
    and ``d>=3`` recurses on the dimension.
    """
    if m < 1 or d < 1:
        raise ValueError(f"need m >= 1 and d >= 1, got m={m}, d={d}")
    forms = tuple(LinearForm(c) for c in _basis_forms(m, d))
    inv = _invert(power_matrix(forms, m))
    # power rows are (forms x monomials); X^alpha = sum_k c_k L_k^m means
    # e_alpha = c P, so c is row alpha of P^{-1}.
    return DirectionBasis(m, d, forms, tuple(tuple(row) for row in inv))


def expand_monomial(basis: DirectionBasis, alpha: Sequence[int]) -> tuple[Fraction, ...]:
    """Coefficients ``c_k`` with ``X^alpha = sum_k c_k L_k^m`` exactly."""
    alpha = tuple(alpha)
    if len(alpha) != basis.d or sum(alpha) != basis.m or min(alpha) < 0:
        raise ValueError(f"multi-index {alpha} is not of degree {basis.m} in {basis.d} variables")
    return basis.expansion[monomials(basis.m, basis.d).index(alpha)]


def recombine(basis: DirectionBasis, coeffs: Sequence[Fraction]) -> list[Fraction]:
    """Monomial coefficients of ``sum_k coeffs[k] * L_k^m``."""
    rows = basis.power_matrix()
    return [sum((Fraction(c) * r[j] for c, r in zip(coeffs, rows)), Fraction(0))
            for j in range(basis.dim)]


def verify_spanning(basis: DirectionBasis | Sequence[LinearForm], m: int | None = None) -> bool:
    """True iff the m-th powers of the forms span degree-``m`` polynomials.

    Accepts a :class:`DirectionBasis` or a bare sequence of forms together
    with ``m``.
    """
    if isinstance(basis, DirectionBasis):
        forms, m = basis.forms, basis.m
    else:
        forms = tuple(basis)
        if m is None:
            raise ValueError("m is required when passing bare forms")
    d = forms[0].d
    return exact_rank(power_matrix(forms, m)) == comb(m + d - 1, d - 1)


def format_basis(basis: DirectionBasis) -> str:
    """Plain-text dump: one form per line, integer coefficients."""
    return "\n".join(str(f) for f in basis.forms) + "\n"
