"""M-matrix predicates, Schur complements and the block Cholesky decomposition.

Every routine accepts either float64 arrays or object arrays of
:class:`fractions.Fraction`; the latter are solved by exact Gauss-Jordan
elimination so worked examples can be replayed without rounding.
"""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from gridcheck.errors import SingularMatrixError, ValidationError
from gridcheck.grid import BlockStructure

__all__ = [
    "MMatrixCheck",
    "BlockCholesky",
    "is_invertible_m_matrix",
    "is_order_preserving",
    "schur_complement",
    "block_cholesky",
    "apply_inverse_factors",
    "solve",
    "inverse",
]

DEFAULT_EPSILON = 1e-9


def is_exact(a: np.ndarray) -> bool:
    return np.asarray(a).dtype == object


def _eye(n: int, exact: bool) -> np.ndarray:
    if not exact:
        return np.eye(n)
    out = np.full((n, n), Fraction(0), dtype=object)
    for i in range(n):
        out[i, i] = Fraction(1)
    return out


def _zeros(shape, exact: bool) -> np.ndarray:
    if not exact:
        return np.zeros(shape)
    return np.full(shape, Fraction(0), dtype=object)


def _solve_exact(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    rhs = b.reshape(n, -1)
    m = np.concatenate([a, rhs], axis=1).astype(object)
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r, col] != 0), None)
        if piv is None:
            raise SingularMatrixError(f"matrix is singular (column {col})")
        if piv != col:
            m[[col, piv]] = m[[piv, col]]
        m[col] = m[col] / m[col, col]
        for r in range(n):
            if r != col and m[r, col] != 0:
                m[r] = m[r] - m[r, col] * m[col]
    out = m[:, n:]
    return out.reshape(b.shape)


def _lu(a: np.ndarray):
    # singular pivots are detected by the callers
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        return sla.lu_factor(a, check_finite=True)


def solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a x = b`` for a vector or matrix right-hand side."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[0] == 0:
        return b.copy()
    if is_exact(a) or is_exact(b):
        return _solve_exact(a.astype(object), b.astype(object))
    lu, piv = _lu(a)
    scale = max(1.0, float(np.abs(a).max()))
    if np.any(np.abs(np.diag(lu)) <= np.finfo(float).eps * scale):
        raise SingularMatrixError("matrix is singular to working precision")
    return sla.lu_solve((lu, piv), b)


def inverse(a: np.ndarray) -> np.ndarray:
    return solve(a, _eye(a.shape[0], is_exact(a)))


@dataclass(frozen=True)
class MMatrixCheck:
    """Outcome of :func:`is_invertible_m_matrix`; truthy when it passes."""

    ok: bool
    reason: str = ""
    row: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def is_invertible_m_matrix(a: np.ndarray) -> MMatrixCheck:
    """Certify an invertible M-matrix by weakly chained diagonal dominance.

    The matrix must have a positive diagonal, nonpositive off-diagonal
    entries, every row weakly diagonally dominant, and every row must reach a
    strictly dominant row through the nonzero pattern.  This is sufficient
    for any Z-matrix and exact for grounded Laplacians, which is what grids
    produce.
    """
    a = np.asarray(a)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        return MMatrixCheck(False, "matrix is not square")
    if n == 0:
        return MMatrixCheck(True)
    exact = is_exact(a)
    diag = np.array([a[i, i] for i in range(n)], dtype=a.dtype)
    off = a.copy()
    for i in range(n):
        off[i, i] = 0
    for i in range(n):
        if not diag[i] > 0:
            return MMatrixCheck(False, "nonpositive diagonal entry", i)
        if any(off[i, j] > 0 for j in range(n)):
            return MMatrixCheck(False, "positive off-diagonal entry", i)
    absoff = np.abs(off)
    surplus = diag - absoff.sum(axis=1)
    if exact:
        tol = [0] * n
    else:
        tol = 1e-12 * (np.abs(diag) + absoff.sum(axis=1))
    for i in range(n):
        if surplus[i] < -tol[i]:
            return MMatrixCheck(False, "row is not diagonally dominant", i)
    strict = [i for i in range(n) if surplus[i] > tol[i]]
    # reverse BFS: row r is chained if some a[r, j] != 0 with j chained
    preds = [[] for _ in range(n)]
    for r in range(n):
        for j in range(n):
            if r != j and off[r, j] != 0:
                preds[j].append(r)
    seen = set(strict)
    queue = deque(strict)
    while queue:
        j = queue.popleft()
        for r in preds[j]:
            if r not in seen:
                seen.add(r)
                queue.append(r)
    for i in range(n):
        if i not in seen:
            return MMatrixCheck(
                False, "row does not chain to a strictly dominant row", i
            )
    return MMatrixCheck(True)


def is_order_preserving(a: np.ndarray, epsilon: float = DEFAULT_EPSILON,
                        floor: float = 0.0) -> bool:
    """``a >= 0`` entrywise (down to ``-floor``) and ``a @ 1 > epsilon``."""
    a = np.asarray(a)
    if a.size == 0:
        return True
    if any(x < -floor for x in a.ravel()):
        return False
    return bool(all(s > epsilon for s in a.sum(axis=1)))


def schur_complement(a: np.ndarray, leading: Sequence[int]) -> np.ndarray:
    """Eliminate the rows/columns in ``leading``: ``a22 - a21 a11^{-1} a12``."""
    a = np.asarray(a)
    lead = list(leading)
    trail = [i for i in range(a.shape[0]) if i not in set(lead)]
    a11 = a[np.ix_(lead, lead)]
    a12 = a[np.ix_(lead, trail)]
    a21 = a[np.ix_(trail, lead)]
    a22 = a[np.ix_(trail, trail)]
    if not lead:
        return a22.copy()
    try:
        return a22 - a21 @ solve(a11, a12)
    except SingularMatrixError:
        raise SingularMatrixError("leading block of the Schur complement is singular") from None


class _BlockSolver:
    """Factorization of one symmetric diagonal block of D."""

    def __init__(self, block: np.ndarray, index: int):
        self.index = index
        self.exact = is_exact(block)
        self.n = block.shape[0]
        if self.exact:
            try:
                self._inv = inverse(block)
            except SingularMatrixError:
                raise SingularMatrixError(
                    f"diagonal block {index} of D is singular", block=index
                ) from None
            return
        try:
            self._cho = sla.cho_factor(block, lower=True, check_finite=True)
            self._lu = None
        except sla.LinAlgError:
            self._cho = None
            lu, piv = _lu(block)
            if np.any(np.abs(np.diag(lu)) <= np.finfo(float).eps * max(1.0, np.abs(block).max())):
                raise SingularMatrixError(
                    f"diagonal block {index} of D is singular", block=index
                ) from None
            self._lu = (lu, piv)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.exact:
            return self._inv @ b
        if self._cho is not None:
            return sla.cho_solve(self._cho, b)
        return sla.lu_solve(self._lu, b)


@dataclass(frozen=True, eq=False)
class BlockCholesky:
    """Factors of ``A = C D C^T`` for a fixed block partition.

    ``C`` is unit block-lower-triangular and ``D`` block diagonal.  Only the
    diagonal blocks of ``D`` are ever factorized; the inverse actions below
    use block substitution.
    """

    C: np.ndarray
    D: np.ndarray
    structure: BlockStructure
    _solvers: tuple = field(repr=False, default=())

    @property
    def n(self) -> int:
        return self.structure.n

    @property
    def exact(self) -> bool:
        return is_exact(self.C)

    def d_block(self, i: int) -> np.ndarray:
        s = self.structure.slices()[i]
        return self.D[s, s]

    def d_block_inverse(self, i: int) -> np.ndarray:
        return self._solvers[i].solve(_eye(self.structure.sizes[i], self.exact))

    def solve_c(self, x: np.ndarray) -> np.ndarray:
        """``C^{-1} x`` by forward block substitution."""
        y = np.array(x, dtype=object if self.exact else float)
        sl = self.structure.slices()
        for i, si in enumerate(sl):
            for j in range(i):
                y[si] = y[si] - self.C[si, sl[j]] @ y[sl[j]]
        return y

    def solve_ct(self, x: np.ndarray) -> np.ndarray:
        """``C^{-T} x`` by backward block substitution."""
        y = np.array(x, dtype=object if self.exact else float)
        sl = self.structure.slices()
        for i in reversed(range(len(sl))):
            for j in range(i + 1, len(sl)):
                y[sl[i]] = y[sl[i]] - self.C[sl[j], sl[i]].T @ y[sl[j]]
        return y

    def solve_d(self, x: np.ndarray) -> np.ndarray:
        """``D^{-1} x`` block by block."""
        y = np.array(x, dtype=object if self.exact else float)
        for s, solver in zip(self.structure.slices(), self._solvers):
            y[s] = solver.solve(y[s])
        return y

    def solve(self, x: np.ndarray) -> np.ndarray:
        """``A^{-1} x = C^{-T} D^{-1} C^{-1} x``."""
        return self.solve_ct(self.solve_d(self.solve_c(x)))

    def c_inverse(self) -> np.ndarray:
        return self.solve_c(_eye(self.n, self.exact))

    def d_inverse(self) -> np.ndarray:
        return self.solve_d(_eye(self.n, self.exact))

    def reconstruct(self) -> np.ndarray:
        return self.C @ self.D @ self.C.T

    def to_dict(self) -> dict:
        return {
            "block_sizes": list(self.structure.sizes),
            "C": [[float(v) for v in row] for row in self.C],
            "D": [[float(v) for v in row] for row in self.D],
        }


def _check_symmetric(a: np.ndarray) -> None:
    if is_exact(a):
        if not all(a[i, j] == a[j, i] for i in range(a.shape[0]) for j in range(i)):
            raise ValidationError("block Cholesky requires a symmetric matrix")
        return
    scale = max(1.0, float(np.abs(a).max())) if a.size else 1.0
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * scale):
        raise ValidationError("block Cholesky requires a symmetric matrix")


def block_cholesky(a: np.ndarray, structure: BlockStructure | Sequence[int]) -> BlockCholesky:
    """Block LDL^T factorization following the given block order.

    Block ``i`` of ``C`` below the diagonal is ``alpha_i A_{i-1}^{-1} C_{i-1}``
    and block ``i`` of ``D`` the Schur complement of ``A_{i-1}`` in ``A_i``.
    Each block uses only blocks ``<= i``, so the factors of any leading
    principal block ``A_i`` are exactly the leading part of the factors of
    ``A``.

    Raises
    ------
    ValidationError
        ``a`` is not square and symmetric or does not match ``structure``.
    SingularMatrixError
        A diagonal block of ``D`` is singular; ``.block`` holds its index.
    """
    a = np.asarray(a)
    if not isinstance(structure, BlockStructure):
        structure = BlockStructure(tuple(structure))
    if a.ndim != 2 or a.shape != (structure.n, structure.n):
        raise ValidationError(
            f"matrix of shape {a.shape} does not match block sizes {structure.sizes}"
        )
    _check_symmetric(a)
    exact = is_exact(a)
    n = structure.n
    C = _eye(n, exact)
    D = _zeros((n, n), exact)
    sl = structure.slices()
    solvers = []
    # W[i][m] = C_im D_m, reused by later rows
    W: dict[tuple[int, int], np.ndarray] = {}
    for i, si in enumerate(sl):
        for j in range(i):
            sj = sl[j]
            acc = a[si, sj].copy()
            for m in range(j):
                acc = acc - W[i, m] @ C[sj, sl[m]].T
            C[si, sj] = solvers[j].solve(acc.T).T
            W[i, j] = C[si, sj] @ D[sj, sj]
        dii = a[si, si].copy()
        for m in range(i):
            dii = dii - W[i, m] @ C[si, sl[m]].T
        if not exact:
            dii = 0.5 * (dii + dii.T)
        D[si, si] = dii
        solvers.append(_BlockSolver(dii, i))
    if not exact:
        C.setflags(write=False)
        D.setflags(write=False)
    return BlockCholesky(C, D, structure, tuple(solvers))


def apply_inverse_factors(f: BlockCholesky, x: np.ndarray) -> np.ndarray:
    """Return ``D^{-1} C^{-1} x`` without forming either inverse."""
    x = np.asarray(x)
    if x.shape[0] != f.n:
        raise ValidationError(
            f"vector of length {x.shape[0]} does not match factor size {f.n}"
        )
    return f.solve_d(f.solve_c(x))
