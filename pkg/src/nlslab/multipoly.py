"""Polynomials in (z, zbar) with scalar or field-valued coefficients.

A term is a monomial z^a zbar^b, a, b multi-indices over the neutral
modes, carrying a complex scalar or ndarray coefficient.  The normal-form
expansion manipulates these as opaque algebra: products convolve
exponents, conjugation swaps a <-> b, and order slices pick |a| = m,
|b| = n.
"""

from __future__ import annotations

import numpy as np

from .grid import Grid, inner_values


def _key(a, b):
    return tuple(int(x) for x in a), tuple(int(x) for x in b)


class Poly:
    """dict of multi-index pairs (a, b) -> coefficient.

    Scalar-coefficient polynomials compile to exponent/coefficient arrays
    on first evaluation; mutate `terms` only before evaluating.
    """

    __slots__ = ("nmodes", "terms", "_cache")

    def __init__(self, nmodes: int, terms: dict | None = None):
        self.nmodes = nmodes
        self.terms = {}
        if terms:
            for (a, b), c in terms.items():
                self._accumulate(_key(a, b), c)

    def _accumulate(self, key, coeff):
        if key in self.terms:
            self.terms[key] = self.terms[key] + coeff
        else:
            self.terms[key] = coeff

    @classmethod
    def zero(cls, nmodes: int) -> "Poly":
        return cls(nmodes)

    @classmethod
    def constant(cls, nmodes: int, coeff) -> "Poly":
        z = (0,) * nmodes
        return cls(nmodes, {(z, z): coeff})

    @classmethod
    def z_var(cls, nmodes: int, k: int) -> "Poly":
        a = tuple(1 if i == k else 0 for i in range(nmodes))
        return cls(nmodes, {(a, (0,) * nmodes): 1.0 + 0.0j})

    @classmethod
    def zbar_var(cls, nmodes: int, k: int) -> "Poly":
        b = tuple(1 if i == k else 0 for i in range(nmodes))
        return cls(nmodes, {((0,) * nmodes, b): 1.0 + 0.0j})

    @classmethod
    def alpha(cls, nmodes: int, k: int) -> "Poly":
        """Re z_k = (z_k + zbar_k) / 2."""
        return 0.5 * (cls.z_var(nmodes, k) + cls.zbar_var(nmodes, k))

    @classmethod
    def beta(cls, nmodes: int, k: int) -> "Poly":
        """Im z_k = (z_k - zbar_k) / (2i)."""
        return (-0.5j) * (cls.z_var(nmodes, k) - cls.zbar_var(nmodes, k))

    def copy(self) -> "Poly":
        return Poly(self.nmodes, dict(self.terms))

    def __add__(self, other: "Poly") -> "Poly":
        out = self.copy()
        for key, c in other.terms.items():
            out._accumulate(key, c)
        return out

    def __sub__(self, other: "Poly") -> "Poly":
        return self + (-1.0) * other

    def __rmul__(self, scalar) -> "Poly":
        return Poly(self.nmodes, {k: scalar * c for k, c in self.terms.items()})

    def __mul__(self, other) -> "Poly":
        if not isinstance(other, Poly):
            return self.__rmul__(other)
        out = Poly(self.nmodes)
        for (a1, b1), c1 in self.terms.items():
            for (a2, b2), c2 in other.terms.items():
                a = tuple(x + y for x, y in zip(a1, a2))
                b = tuple(x + y for x, y in zip(b1, b2))
                out._accumulate((a, b), c1 * c2)
        return out

    def conjugate(self) -> "Poly":
        return Poly(self.nmodes,
                    {(b, a): np.conj(c) for (a, b), c in self.terms.items()})

    def truncate(self, max_degree: int) -> "Poly":
        return Poly(self.nmodes, {
            (a, b): c for (a, b), c in self.terms.items()
            if sum(a) + sum(b) <= max_degree
        })

    def order_slice(self, m: int, n: int) -> "Poly":
        return Poly(self.nmodes, {
            (a, b): c for (a, b), c in self.terms.items()
            if sum(a) == m and sum(b) == n
        })

    def orders(self) -> set[tuple[int, int]]:
        return {(sum(a), sum(b)) for a, b in self.terms}

    def map_coeff(self, fn) -> "Poly":
        return Poly(self.nmodes, {k: fn(c) for k, c in self.terms.items()})

    def coeff(self, a, b):
        return self.terms.get(_key(a, b), 0.0)

    def _compiled(self):
        # fast path for all-scalar coefficients: exponent and coeff arrays
        if not all(np.isscalar(c) or getattr(c, "ndim", 1) == 0
                   for c in self.terms.values()):
            return None
        keys = list(self.terms)
        exps_a = np.array([k[0] for k in keys], dtype=np.int64).reshape(len(keys), self.nmodes)
        exps_b = np.array([k[1] for k in keys], dtype=np.int64).reshape(len(keys), self.nmodes)
        coeffs = np.array([complex(self.terms[k]) for k in keys])
        return exps_a, exps_b, coeffs

    def __call__(self, z: np.ndarray):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if not self.terms:
            return 0.0
        try:
            cache = self._cache
        except AttributeError:
            cache = self._compiled()
            self._cache = cache
        if cache is not None:
            ea, eb, cf = cache
            mono = np.prod(z[None, :] ** ea, axis=1) * \
                np.prod(np.conj(z)[None, :] ** eb, axis=1)
            return complex(np.dot(cf, mono))
        zb = np.conj(z)
        total = None
        for (a, b), c in self.terms.items():
            mono = 1.0 + 0.0j
            for k in range(self.nmodes):
                if a[k]:
                    mono *= z[k] ** a[k]
                if b[k]:
                    mono *= zb[k] ** b[k]
            total = c * mono if total is None else total + c * mono
        return 0.0 if total is None else total


def dot_modes(polys: list[Poly], fields: list[np.ndarray]) -> Poly:
    """sum_k polys[k] * fields[k], e.g. alpha . xi as a field-valued Poly."""
    out = Poly(polys[0].nmodes)
    for p, f in zip(polys, fields):
        for key, c in p.terms.items():
            out._accumulate(key, c * f)
    return out


def stack2(p_top: Poly, p_bot: Poly) -> Poly:
    """Combine two scalar-field polys into one with stacked 2-vector coeffs."""
    out = Poly(p_top.nmodes)
    keys = set(p_top.terms) | set(p_bot.terms)
    for key in keys:
        top = p_top.terms.get(key)
        bot = p_bot.terms.get(key)
        if top is None:
            top = np.zeros_like(bot)
        if bot is None:
            bot = np.zeros_like(top)
        out.terms[key] = np.stack([np.asarray(top, dtype=complex),
                                   np.asarray(bot, dtype=complex)])
    return out


def poly_inner(grid: Grid, p: Poly, g: np.ndarray) -> Poly:
    """<coeff, g> per term; g real so the pairing stays monomial-wise."""
    return p.map_coeff(lambda c: inner_values(grid, c, g))


def poly_pair(grid: Grid, p: Poly, q: Poly) -> Poly:
    """<p, q> with the second slot conjugated:
    <c1 z^a1 zb^b1, c2 z^a2 zb^b2> = <c1, c2> z^(a1+b2) zb^(b1+a2)."""
    out = Poly(p.nmodes)
    for (a1, b1), c1 in p.terms.items():
        for (a2, b2), c2 in q.terms.items():
            a = tuple(x + y for x, y in zip(a1, b2))
            b = tuple(x + y for x, y in zip(b1, a2))
            out._accumulate((a, b), inner_values(grid, c1, c2))
    return out
