"""Exact slope algebra for derived bundles.

Index enumerations for tensor, symmetric, and exterior powers, the
rearrangement applied to the k-fold slope sums those powers induce, and
the vanishing predicate built on top. The maps run in whatever scalar
arithmetic the inputs carry, so Fraction vectors stay exact end to end
and float vectors cost nothing extra.
"""

from itertools import combinations, combinations_with_replacement, product
from math import comb

from .errors import KTooLarge, UnknownTag

__all__ = [
    "descending",
    "tau",
    "enumerate_indices",
    "vec_T",
    "vec_Tk",
    "vec_Sk",
    "vec_Ak",
    "derived_hn_type",
    "vanishing_condition",
]


def descending(values):
    """Validated slope vector: a non-increasing tuple.

    Raises:
        ValueError: empty input or an increasing adjacent pair.
    """
    vals = tuple(values)
    if not vals:
        raise ValueError("slope vector is empty")
    if any(a < b for a, b in zip(vals, vals[1:])):
        raise ValueError(f"slope vector not non-increasing: {vals}")
    return vals


def tau(values):
    """Rearrange into non-increasing order, keeping the scalar type."""
    return tuple(sorted(values, reverse=True))


def enumerate_indices(kind, k, r):
    """Ordered index set of the k-fold functor on rank r.

    tensor: all k-tuples over 1..r in lexicographic order, r^k of them.
    sym: multiplicity vectors (a_1..a_r) with sum k, first-heavy order
        matching the monomial basis, C(r+k-1, k) of them.
    ext: strictly increasing k-tuples over 1..r, C(r, k) of them.

    Raises:
        KTooLarge: ext with k > r.
        UnknownTag: unrecognized kind.
        ValueError: k or r below 1.
    """
    if k < 1 or r < 1:
        raise ValueError(f"need k >= 1 and r >= 1, got k={k}, r={r}")
    if kind == "tensor":
        return list(product(range(1, r + 1), repeat=k))
    if kind == "sym":
        out = []
        for combo in combinations_with_replacement(range(1, r + 1), k):
            mult = [0] * r
            for i in combo:
                mult[i - 1] += 1
            out.append(tuple(mult))
        return out
    if kind == "ext":
        if k > r:
            raise KTooLarge(f"exterior power k={k} exceeds rank {r}")
        return list(combinations(range(1, r + 1), k))
    raise UnknownTag(f"index kind {kind!r} not one of tensor/sym/ext")


def vec_T(x, y):
    """All pairwise sums of two slope vectors, rearranged.

    The spectrum law behind it: for diagonal operators the induced action
    on the tensor product is the Kronecker sum, whose eigenvalues are
    exactly these pairwise sums.
    """
    x = descending(x)
    y = descending(y)
    return tau(a + b for a in x for b in y)


def vec_Tk(x, k):
    """Sorted k-fold sums with repetition and order distinguished."""
    x = descending(x)
    idx = enumerate_indices("tensor", k, len(x))
    out = tau(sum(x[i - 1] for i in t) for t in idx)
    assert len(out) == len(x) ** k
    return out


def vec_Sk(x, k):
    """Sorted weighted sums over multiplicity vectors of total weight k."""
    x = descending(x)
    idx = enumerate_indices("sym", k, len(x))
    out = tau(sum(a * v for a, v in zip(mult, x)) for mult in idx)
    assert len(out) == comb(len(x) + k - 1, k)
    return out


def vec_Ak(x, k):
    """Sorted sums over k-element subsets; top entry is the k largest."""
    x = descending(x)
    idx = enumerate_indices("ext", k, len(x))
    out = tau(sum(x[i - 1] for i in t) for t in idx)
    assert len(out) == comb(len(x), k)
    return out


def derived_hn_type(op, mu, mu2=None, k=1):
    """Slope vector of a derived bundle from the slope vector(s) of its parts.

    Args:
        op: "tensor" (binary, needs mu2), "tensor_pow", "sym", or "ext".
        mu: slope vector of the base bundle, non-increasing.
        mu2: second slope vector, tensor only.
        k: power for the k-fold ops.

    Raises:
        UnknownTag: unrecognized op.
        ValueError: missing or superfluous second vector.
    """
    if op == "tensor":
        if mu2 is None:
            raise ValueError("tensor needs a second slope vector")
        return vec_T(mu, mu2)
    if mu2 is not None:
        raise ValueError(f"op {op!r} takes a single slope vector")
    if op == "tensor_pow":
        return vec_Tk(mu, k)
    if op == "sym":
        return vec_Sk(mu, k)
    if op == "ext":
        return vec_Ak(mu, k)
    raise UnknownTag(f"derived op {op!r} unknown")


def vanishing_condition(k, l, mu_u_e, mu_u_f):
    """Negativity of the top slope of the (k, l) mixed tensor power.

    True iff k*mu_u_e + l*mu_u_f < 0; equivalently the first entry of the
    derived type of E^tensor-k tensor F^tensor-l is negative, which is the
    hypothesis under which its sections vanish.

    Raises:
        ValueError: negative k or l, or both zero.
    """
    if k < 0 or l < 0 or (k == 0 and l == 0):
        raise ValueError(f"need k, l >= 0 and not both zero, got {k}, {l}")
    return k * mu_u_e + l * mu_u_f < 0
