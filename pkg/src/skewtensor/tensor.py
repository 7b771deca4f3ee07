"""
Dense tensor operators.

Tensors are plain :class:`numpy.ndarray` objects of order ``D``.  The linear
layout is C order: the last mode varies fastest.  With that convention

.. math::
    \\mathrm{Cov}(\\mathrm{vec}(\\mathscr{X})) = \\Delta_1 \\otimes \\cdots \\otimes \\Delta_D

holds literally for ``vec_tensor`` below.

Modes are zero-based throughout (``axis=0`` is the first mode).  Functions
that take a *batch* of tensors treat the leading axis as the observation
index and the trailing ``D`` axes as the tensor.
"""

from __future__ import annotations

from functools import cached_property, reduce
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cholesky, solve_triangular

MAX_ORDER = 8


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a scale matrix fails its Cholesky factorization."""


def as_tensor(t: ArrayLike) -> NDArray[np.float64]:
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim < 1 or arr.ndim > MAX_ORDER:
        raise ValueError(f"tensor order must be in 1..{MAX_ORDER}, got {arr.ndim}")
    if 0 in arr.shape:
        raise ValueError(f"all tensor dims must be >= 1, got {arr.shape}")
    return arr


def vec_tensor(t: ArrayLike) -> NDArray[np.float64]:
    """Vectorize a tensor with the last mode varying fastest."""
    return as_tensor(t).reshape(-1)


def matricize(t: ArrayLike, axis: int) -> NDArray[np.float64]:
    """Mode-``axis`` matricization.

    Returns an ``(n*/n_j, n_j)`` matrix whose column ``c`` holds every entry
    with mode-``axis`` index ``c``.  Rows follow the C order of the remaining
    modes, so the row covariance of a tensor-normal draw is the ascending
    Kronecker product of the other scale matrices.
    """
    t = as_tensor(t)
    _check_axis(axis, t.ndim)
    n_j = t.shape[axis]
    return np.moveaxis(t, axis, -1).reshape(-1, n_j)


def unmatricize(m: ArrayLike, dims: Sequence[int], axis: int) -> NDArray[np.float64]:
    """Inverse of :func:`matricize`."""
    m = np.asarray(m, dtype=np.float64)
    dims = tuple(int(d) for d in dims)
    _check_axis(axis, len(dims))
    n_star = int(np.prod(dims))
    expected = (n_star // dims[axis], dims[axis])
    if m.shape != expected:
        raise ValueError(f"matrix shape {m.shape} does not match {expected} for dims {dims}")
    rest = dims[:axis] + dims[axis + 1:]
    return np.moveaxis(m.reshape(rest + (dims[axis],)), -1, axis)


def mode_product(t: ArrayLike, m: ArrayLike, axis: int) -> NDArray[np.float64]:
    """Mode-``axis`` product ``t x_axis m``.

    ``result[..., i, ...] = sum_k m[i, k] * t[..., k, ...]``.
    """
    t = np.asarray(t, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    _check_axis(axis, t.ndim)
    if m.ndim != 2 or m.shape[1] != t.shape[axis]:
        raise ValueError(
            f"matrix with {m.shape} cannot multiply mode {axis} of length {t.shape[axis]}"
        )
    return np.moveaxis(np.tensordot(m, t, axes=(1, axis)), 0, axis)


def multi_mode_product(t: NDArray, mats: Sequence[NDArray | None], offset: int = 0) -> NDArray:
    """Apply ``mats[d]`` along axis ``offset + d`` for every non-``None`` entry."""
    out = t
    for d, m in enumerate(mats):
        if m is not None:
            out = mode_product(out, m, offset + d)
    return out


def kron_chain(mats: Sequence[ArrayLike]) -> NDArray[np.float64]:
    """Left-to-right Kronecker product ``mats[0] kron mats[1] kron ...``."""
    if len(mats) == 0:
        raise ValueError("kron_chain needs at least one matrix")
    return reduce(np.kron, [np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in mats])


def permute_l2(t: ArrayLike, l: int, offset: int = 0) -> NDArray[np.float64]:
    """Swap the second mode with mode ``l`` (zero-based, ``2 <= l < D``).

    The operation is an involution.  ``offset`` skips leading batch axes.
    """
    t = np.asarray(t, dtype=np.float64)
    order = t.ndim - offset
    if order < 3:
        raise ValueError("permute_l2 needs a tensor of order >= 3")
    if not 2 <= l < order:
        raise ValueError(f"l must be in 2..{order - 1}, got {l}")
    return np.swapaxes(t, offset + 1, offset + l)


def _check_axis(axis: int, order: int) -> None:
    if not 0 <= axis < order:
        raise ValueError(f"mode {axis} out of range for an order-{order} tensor")


class ScaleSet:
    """The ``D`` symmetric positive-definite scale matrices of a separable covariance.

    Factorizations are computed lazily and cached; instances are treated as
    immutable.

    Parameters
    ----------
    matrices : sequence of array_like
        ``Delta_1, ..., Delta_D``.
    """

    def __init__(self, matrices: Sequence[ArrayLike]):
        mats = []
        for k, m in enumerate(matrices):
            m = np.array(m, dtype=np.float64, ndmin=2)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"scale matrix {k} is not square: {m.shape}")
            scale = max(np.max(np.abs(m)), np.finfo(float).tiny)
            if np.max(np.abs(m - m.T)) > 1e-12 * scale:
                raise ValueError(f"scale matrix {k} is not symmetric")
            m = 0.5 * (m + m.T)
            m.setflags(write=False)
            mats.append(m)
        if not mats:
            raise ValueError("ScaleSet needs at least one matrix")
        self.matrices: tuple[NDArray[np.float64], ...] = tuple(mats)

    @classmethod
    def identity(cls, dims: Sequence[int]) -> "ScaleSet":
        return cls([np.eye(n) for n in dims])

    def __len__(self) -> int:
        return len(self.matrices)

    def __getitem__(self, d: int) -> NDArray[np.float64]:
        return self.matrices[d]

    def __iter__(self):
        return iter(self.matrices)

    def __repr__(self) -> str:
        return f"ScaleSet(dims={self.dims})"

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(m.shape[0] for m in self.matrices)

    @property
    def n_star(self) -> int:
        return int(np.prod(self.dims))

    def replace(self, d: int, m: ArrayLike) -> "ScaleSet":
        mats = list(self.matrices)
        mats[d] = m
        return ScaleSet(mats)

    @cached_property
    def cholesky(self) -> tuple[NDArray[np.float64], ...]:
        """Lower Cholesky factors ``L_d`` with ``L_d L_d^T = Delta_d``."""
        out = []
        for k, m in enumerate(self.matrices):
            try:
                out.append(cholesky(m, lower=True))
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefiniteError(f"scale matrix {k} is not positive definite") from exc
        return tuple(out)

    @cached_property
    def whiteners(self) -> tuple[NDArray[np.float64], ...]:
        """``L_d^{-1}``; satisfies ``W_d^T W_d = Delta_d^{-1}``."""
        return tuple(solve_triangular(L, np.eye(L.shape[0]), lower=True) for L in self.cholesky)

    @cached_property
    def inverses(self) -> tuple[NDArray[np.float64], ...]:
        return tuple(W.T @ W for W in self.whiteners)

    @cached_property
    def sqrt_factors(self) -> tuple[NDArray[np.float64], ...]:
        """Symmetric square roots ``Delta_d^{1/2}`` (eigen-decomposition)."""
        out = []
        for m in self.matrices:
            vals, vecs = np.linalg.eigh(m)
            out.append((vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T)
        return tuple(out)

    @cached_property
    def logdets(self) -> tuple[float, ...]:
        return tuple(2.0 * float(np.sum(np.log(np.diag(L)))) for L in self.cholesky)

    def log_det_kron(self) -> float:
        """``log |Delta_1 kron ... kron Delta_D| = sum_d (n*/n_d) log|Delta_d|``."""
        n_star = self.n_star
        return float(sum(n_star / n * ld for n, ld in zip(self.dims, self.logdets)))

    def kron(self) -> NDArray[np.float64]:
        """Materialize the full Kronecker product.  Only for small dims."""
        return kron_chain(self.matrices)


def _whitener_list(scale_inv) -> Sequence[NDArray]:
    if isinstance(scale_inv, ScaleSet):
        return scale_inv.whiteners
    return scale_inv


def whiten(t: ArrayLike, scale_inv, offset: int = 0) -> NDArray[np.float64]:
    """Apply every whitening factor ``W_d`` along its mode.

    ``scale_inv`` is either a :class:`ScaleSet` or a sequence of factors
    ``W_d`` with ``W_d^T W_d = Delta_d^{-1}``.
    """
    return multi_mode_product(np.asarray(t, dtype=np.float64), _whitener_list(scale_inv), offset)


def _check_same_dims(*tensors: NDArray) -> None:
    shapes = {np.shape(t) for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")


def _check_scale_dims(t: NDArray, scale_inv, offset: int = 0) -> None:
    factors = _whitener_list(scale_inv)
    dims = tuple(np.shape(t)[offset:])
    fdims = tuple(np.shape(f)[1] for f in factors)
    if dims != fdims:
        raise ValueError(f"tensor dims {dims} do not match scale dims {fdims}")


def quad_delta(x: ArrayLike, m: ArrayLike, scale_inv) -> float:
    """Mahalanobis form ``vec(x-m)^T (kron_d Delta_d^{-1}) vec(x-m)``."""
    x = as_tensor(x)
    m = as_tensor(m)
    _check_same_dims(x, m)
    _check_scale_dims(x, scale_inv)
    z = whiten(x - m, scale_inv)
    return float(np.sum(z * z))


def quad_rho(a: ArrayLike, scale_inv) -> float:
    """Skewness form ``vec(a)^T (kron_d Delta_d^{-1}) vec(a)``."""
    a = as_tensor(a)
    _check_scale_dims(a, scale_inv)
    z = whiten(a, scale_inv)
    return float(np.sum(z * z))


def cross_form(x: ArrayLike, m: ArrayLike, a: ArrayLike, scale_inv) -> float:
    """Bilinear form ``vec(x-m)^T (kron_d Delta_d^{-1}) vec(a)``."""
    x = as_tensor(x)
    m = as_tensor(m)
    a = as_tensor(a)
    _check_same_dims(x, m, a)
    _check_scale_dims(x, scale_inv)
    zx = whiten(x - m, scale_inv)
    za = whiten(a, scale_inv)
    return float(np.sum(zx * za))
