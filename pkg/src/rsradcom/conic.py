"""
Small dense conic solver front end.

Problems are posed in the standard primal form

    minimize    c^T x
    subject to  A x = b,   x in K = K_1 x K_2 x ... x K_p

where the cones partition ``x`` in order. Supported cones are free
variables, the nonnegative orthant, the second-order cone
``{(t, z) : ||z|| <= t}`` and the cone of positive semidefinite matrices,
stored as ``svec`` (lower triangle, column-major, off-diagonals scaled by
sqrt(2)) so that the Euclidean inner product equals the trace product.

The interior-point iterations are delegated to ``cvxopt.solvers.conelp``.
Presolve (dependent-row removal) and the KKT certificate that decides the
returned status are computed here, independently of the backend.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
import numpy as np
import scipy.linalg as sla

__all__ = [
    "Cone", "ConicProblem", "ConicSolution", "ConicError", "ConicBuilder",
    "embed_hermitian", "unembed_hermitian", "svec", "smat", "solve",
    "dump_problem", "load_problem",
]

SQRT2 = np.sqrt(2.0)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERS = "max_iters"


class ConicError(RuntimeError):
    """Raised when a conic solve does not return a certified optimum."""

    def __init__(self, message, solution=None, problem=None):
        super().__init__(message)
        self.solution = solution
        self.problem = problem


@dataclass(frozen=True)
class Cone:
    kind: str  # "free" | "nonneg" | "soc" | "psd"
    size: int  # side length for "psd", vector length otherwise

    def __post_init__(self):
        if self.kind not in ("free", "nonneg", "soc", "psd"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("cone size must be positive")

    @property
    def dim(self) -> int:
        if self.kind == "psd":
            return self.size * (self.size + 1) // 2
        return self.size


@dataclass
class ConicProblem:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    cones: list

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.A = np.asarray(self.A, dtype=float).reshape(len(self.b), -1)
        n = sum(k.dim for k in self.cones)
        if n != self.c.size or (self.A.size and self.A.shape[1] != n):
            raise ValueError(
                f"cone dimensions sum to {n} but c has length {self.c.size}")

    @property
    def n(self) -> int:
        return self.c.size

    def slices(self):
        out, start = [], 0
        for k in self.cones:
            out.append(slice(start, start + k.dim))
            start += k.dim
        return out


@dataclass
class ConicSolution:
    x_star: np.ndarray
    y_star: np.ndarray
    status: str
    kkt_residuals: tuple  # (primal, dual, gap), relative
    objective: float = np.nan
    iterations: int = 0
    backend_status: str = ""
    s_star: np.ndarray = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# Matrix helpers
# ---------------------------------------------------------------------------

def embed_hermitian(H, tol=1e-10):
    """
    Real symmetric embedding ``[[Re H, -Im H], [Im H, Re H]]`` of a
    Hermitian matrix. The spectrum of the embedding is that of ``H`` with
    every eigenvalue repeated twice.
    """
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    if H.shape[0] != H.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    if np.max(np.abs(H - H.conj().T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not Hermitian within tolerance")
    re, im = H.real, H.imag
    return np.block([[re, -im], [im, re]])


def unembed_hermitian(Y):
    """
    Inverse of :func:`embed_hermitian`. Any real symmetric ``Y`` maps to
    the Hermitian matrix ``((A + D) + j (C - B)) / 2``; for PSD ``Y`` the
    result is PSD as well.
    """
    Y = np.asarray(Y, dtype=float)
    m = Y.shape[0] // 2
    A, B = Y[:m, :m], Y[:m, m:]
    C, D = Y[m:, :m], Y[m:, m:]
    X = 0.5 * (A + D) + 0.5j * (C - B)
    return 0.5 * (X + X.conj().T)


def svec(X):
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    rows, cols = np.tril_indices(n)
    order = np.lexsort((rows, cols))  # column-major
    rows, cols = rows[order], cols[order]
    scale = np.where(rows == cols, 1.0, SQRT2)
    return X[rows, cols] * scale


def smat(v):
    v = np.asarray(v, dtype=float)
    n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    rows, cols = np.tril_indices(n)
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    scale = np.where(rows == cols, 1.0, 1.0 / SQRT2)
    X = np.zeros((n, n))
    X[rows, cols] = v * scale
    X[cols, rows] = v * scale
    return X


def svec_index(n, i, j):
    """Position of entry (i, j) of an n x n symmetric matrix inside svec."""
    if i < j:
        i, j = j, i
    # columns 0..j-1 contribute n, n-1, ..., n-j+1 entries
    return j * n - j * (j - 1) // 2 + (i - j)


# ---------------------------------------------------------------------------
# Cone projections (used for certificates)
# ---------------------------------------------------------------------------

def _project_cone(v, cone, dual=False):
    if cone.kind == "free":
        return np.zeros_like(v) if dual else v.copy()
    if cone.kind == "nonneg":
        return np.maximum(v, 0.0)
    if cone.kind == "soc":
        t, z = v[0], v[1:]
        nz = np.linalg.norm(z)
        if nz <= t:
            return v.copy()
        if nz <= -t:
            return np.zeros_like(v)
        a = 0.5 * (t + nz)
        return np.concatenate(([a], a * z / nz))
    w, V = np.linalg.eigh(smat(v))
    return svec((V * np.maximum(w, 0.0)) @ V.T)


def cone_violation(x, cones, dual=False):
    """Euclidean distance of ``x`` from the cone (or its dual)."""
    total, start = 0.0, 0
    for k in cones:
        seg = x[start:start + k.dim]
        total += float(np.sum((seg - _project_cone(seg, k, dual)) ** 2))
        start += k.dim
    return np.sqrt(total)


def kkt_residuals(problem, x, y):
    """
    Relative ``(primal, dual, gap)`` residuals of the pair ``(x, y)``, with
    the dual slack taken as ``s = c - A^T y``.
    """
    c, A, b = problem.c, problem.A, problem.b
    s = c - A.T @ y if A.size else c.copy()
    r_eq = np.linalg.norm(A @ x - b) if A.size else 0.0
    primal = np.hypot(r_eq, cone_violation(x, problem.cones)) / (
        1.0 + np.linalg.norm(b))
    dual = cone_violation(s, problem.cones, dual=True) / (
        1.0 + np.linalg.norm(c))
    pobj, dobj = c @ x, b @ y
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return (float(primal), float(dual), float(gap)), s


# ---------------------------------------------------------------------------
# Presolve
# ---------------------------------------------------------------------------

def _presolve(A, b, tol=1e-10):
    """Drop linearly dependent rows of ``A``; fail if they are inconsistent."""
    if A.shape[0] == 0:
        return A, b, np.arange(0)
    _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0:
        return A[:0], b[:0], np.arange(0)
    rank = int(np.sum(diag > tol * max(1.0, diag[0])))
    keep = np.sort(piv[:rank])
    if rank < A.shape[0]:
        Ak, bk = A[keep], b[keep]
        sol, *_ = np.linalg.lstsq(Ak, bk, rcond=None)
        resid = np.linalg.norm(A @ sol - b)
        if resid > 1e-8 * (1.0 + np.linalg.norm(b)):
            raise ConicError("equality system is inconsistent")
        return Ak, bk, keep
    return A, b, keep


# ---------------------------------------------------------------------------
# Backend
# ---------------------------------------------------------------------------

def _backend_matrices(problem):
    """Map cone membership of x to cvxopt's  G x + s = h,  s in K."""
    lin_rows, soc_blocks, psd_blocks = [], [], []
    n = problem.n
    for cone, sl in zip(problem.cones, problem.slices()):
        idx = np.arange(sl.start, sl.stop)
        if cone.kind == "nonneg":
            lin_rows.append(idx)
        elif cone.kind == "soc":
            soc_blocks.append(idx)
        elif cone.kind == "psd":
            psd_blocks.append((cone.size, sl.start))

    n_lin = sum(len(r) for r in lin_rows)
    soc_dims = [len(r) for r in soc_blocks]
    psd_dims = [m for m, _ in psd_blocks]
    n_rows = n_lin + sum(soc_dims) + sum(m * m for m in psd_dims)
    G = np.zeros((n_rows, n))
    row = 0
    for idx in lin_rows + soc_blocks:
        G[row + np.arange(len(idx)), idx] = -1.0
        row += len(idx)
    for m, start in psd_blocks:
        for j in range(m):
            for i in range(j, m):
                k = start + svec_index(m, i, j)
                G[row + i + j * m, k] = -1.0 if i == j else -1.0 / SQRT2
        row += m * m
    dims = {"l": n_lin, "q": soc_dims, "s": psd_dims}
    return G, np.zeros(n_rows), dims


def _dual_row_weights(dims):
    """
    Weights turning cvxopt's packed z into a plain inner product: in an
    's' block the strictly lower entries count twice and the upper ones not
    at all.
    """
    w = [np.ones(dims["l"] + sum(dims["q"]))]
    for m in dims["s"]:
        blk = np.tril(np.full((m, m), 2.0), -1) + np.eye(m)
        w.append(blk.ravel(order="F"))
    return np.concatenate(w)


def solve(problem, tolerance=1e-6, max_iters=500):
    """
    Solve a :class:`ConicProblem` and certify the result.

    The status is ``"optimal"`` only when all three relative KKT residuals
    are within ``tolerance``; backend infeasibility certificates map to
    ``"infeasible"``/``"unbounded"`` and anything else to ``"max_iters"``.
    """
    import cvxopt
    from cvxopt import solvers

    A, b, keep = _presolve(problem.A, problem.b)
    G, h, dims = _backend_matrices(problem)
    m = cvxopt.matrix

    # Eliminate the equalities, x = x0 + N w, whenever the cone rows then
    # determine w; this shrinks the backend KKT systems considerably.
    reduced = None
    if A.shape[0]:
        x0, *_ = np.linalg.lstsq(A, b, rcond=None)
        Nsp = sla.null_space(A)
        if Nsp.shape[1] and np.linalg.matrix_rank(G @ Nsp) == Nsp.shape[1]:
            reduced = (x0, Nsp)

    if reduced is not None:
        x0, Nsp = reduced
        args = dict(dims=dims)
        cm, Gm, hm = m(Nsp.T @ problem.c), m(G @ Nsp), m(h - G @ x0)
    else:
        args = dict(dims=dims)
        if A.shape[0]:
            args.update(A=m(A), b=m(b))
        cm, Gm, hm = m(problem.c), m(G), m(h)

    best = None
    # cvxopt does not keep its best iterate, so overly tight stopping rules
    # can run past the attainable accuracy; retry with looser ones.
    for tol in _BACKEND_LADDER:
        opts = {"show_progress": False, "maxiters": int(max_iters),
                "abstol": tol, "reltol": tol, "feastol": tol}
        try:
            res = solvers.conelp(cm, Gm, hm, options=opts, **args)
        except (ValueError, ArithmeticError) as exc:
            sol = ConicSolution(np.full(problem.n, np.nan),
                                np.zeros(problem.A.shape[0]), MAX_ITERS,
                                (np.inf, np.inf, np.inf),
                                backend_status=str(exc))
            best = best or sol
            continue
        if reduced is not None:
            sol = _interpret_reduced(problem, res, reduced, A, keep,
                                     G * _dual_row_weights(dims)[:, None],
                                     tolerance)
        else:
            sol = _interpret(problem, res, keep, tolerance)
        if sol.status in (OPTIMAL, INFEASIBLE, UNBOUNDED):
            return sol
        if best is None or max(sol.kkt_residuals) < max(best.kkt_residuals):
            best = sol
    return best


def _interpret_reduced(problem, res, reduced, A, keep, G_dual, tolerance):
    backend = res["status"]
    iters = int(res.get("iterations", 0))
    nan_x = np.full(problem.n, np.nan)
    zero_y = np.zeros(problem.A.shape[0])
    if backend == "primal infeasible":
        return ConicSolution(nan_x, zero_y, INFEASIBLE, (np.inf,) * 3,
                             iterations=iters, backend_status=backend)
    if backend == "dual infeasible":
        return ConicSolution(nan_x, zero_y, UNBOUNDED, (np.inf,) * 3,
                             iterations=iters, backend_status=backend)
    x0, Nsp = reduced
    x = x0 + Nsp @ np.array(res["x"]).ravel()
    # cone duals of x are -G^T z; equality duals follow by least squares
    s_cone = -G_dual.T @ np.array(res["z"]).ravel()
    yk, *_ = np.linalg.lstsq(A.T, problem.c - s_cone, rcond=None)
    y = zero_y.copy()
    y[keep] = yk
    kkt, s = kkt_residuals(problem, x, y)
    status = OPTIMAL if max(kkt) <= tolerance else MAX_ITERS
    return ConicSolution(x, y, status, kkt, float(problem.c @ x), iters,
                         backend, s)


_BACKEND_LADDER = (1e-8, 1e-7, 1e-6)


def _interpret(problem, res, keep, tolerance):
    backend = res["status"]
    iters = int(res.get("iterations", 0))
    nan_x = np.full(problem.n, np.nan)
    zero_y = np.zeros(problem.A.shape[0])
    if backend == "primal infeasible":
        return ConicSolution(nan_x, zero_y, INFEASIBLE, (np.inf,) * 3,
                             iterations=iters, backend_status=backend)
    if backend == "dual infeasible":
        return ConicSolution(nan_x, zero_y, UNBOUNDED, (np.inf,) * 3,
                             iterations=iters, backend_status=backend)
    x = np.array(res["x"]).ravel()
    y = zero_y.copy()
    if keep.size and res["y"] is not None:
        # cvxopt's Lagrangian is c + A^T y + G^T z = 0
        y[keep] = -np.array(res["y"]).ravel()
    kkt, s = kkt_residuals(problem, x, y)
    status = OPTIMAL if max(kkt) <= tolerance else MAX_ITERS
    return ConicSolution(x, y, status, kkt, float(problem.c @ x), iters,
                         backend, s)


# ---------------------------------------------------------------------------
# JSON debug format
# ---------------------------------------------------------------------------

def dump_problem(problem, path, note=""):
    doc = {
        "format": "rsradcom-conic/1",
        "note": note,
        "c": problem.c.tolist(),
        "A": problem.A.tolist(),
        "b": problem.b.tolist(),
        "cones": [[k.kind, k.size] for k in problem.cones],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_problem(path):
    with open(path) as fh:
        doc = json.load(fh)
    cones = [Cone(kind, size) for kind, size in doc["cones"]]
    A = np.array(doc["A"], dtype=float).reshape(len(doc["b"]), -1)
    return ConicProblem(np.array(doc["c"]), A, np.array(doc["b"]), cones)


# ---------------------------------------------------------------------------
# Problem assembly
# ---------------------------------------------------------------------------

class ConicBuilder:
    """
    Incremental assembly of a :class:`ConicProblem`.

    Variables are added block by block (each block is one cone); linear
    equalities are given as a list of ``(block, coefficient_matrix)``
    terms. Quadratic forms are turned into second-order cone epigraphs
    with :meth:`add_quadratic_le`.
    """

    def __init__(self):
        self._cones = []
        self._offsets = []
        self._n = 0
        self._rows = []  # (list of (offset, matrix)), rhs
        self._cost = {}

    @property
    def n(self):
        return self._n

    def variable(self, kind, size):
        cone = Cone(kind, size)
        start = self._n
        self._cones.append(cone)
        self._offsets.append(start)
        self._n += cone.dim
        return slice(start, start + cone.dim)

    def equality(self, terms, rhs):
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        mats = []
        for sl, M in terms:
            M = np.asarray(M, dtype=float)
            if M.ndim == 1:
                M = M[None, :] if rhs.size == 1 else np.diag(M)
            if M.shape != (rhs.size, sl.stop - sl.start):
                raise ValueError(
                    f"term shape {M.shape} does not match "
                    f"({rhs.size}, {sl.stop - sl.start})")
            mats.append((sl, M))
        self._rows.append((mats, rhs))

    def cost(self, sl, coeffs):
        vec = self._cost.setdefault((sl.start, sl.stop),
                                    np.zeros(sl.stop - sl.start))
        vec += np.asarray(coeffs, dtype=float)

    def add_quadratic_le(self, f_terms, w_terms, w_const, offset=None,
                         scale=1.0):
        """
        Impose ``||sum_i F_i x_i + offset||^2 <= scale * w`` with the affine
        bound ``w = sum_j a_j^T x_j + w_const``.

        Uses ``||f||^2 <= s w  <=>  ||(2 f, w - s)|| <= w + s``; choosing
        ``scale`` near the expected size of ``||f||`` keeps the cone well
        conditioned. Returns the slice of the new second-order cone block.
        """
        f_terms = [(sl, np.atleast_2d(np.asarray(F, dtype=float)))
                   for sl, F in f_terms]
        r = f_terms[0][1].shape[0]
        off = np.zeros(r) if offset is None else np.asarray(offset, float)
        cone = self.variable("soc", r + 2)
        t = slice(cone.start, cone.start + 1)
        z = slice(cone.start + 1, cone.start + 1 + r)
        tail = slice(cone.start + 1 + r, cone.stop)
        w_neg = [(sl, -np.atleast_1d(np.asarray(a, dtype=float)))
                 for sl, a in w_terms]
        self.equality([(t, [1.0])] + w_neg, scale + w_const)
        self.equality([(z, np.eye(r))] + [(sl, -2.0 * F) for sl, F in f_terms],
                      2.0 * off)
        self.equality([(tail, [1.0])] + w_neg, w_const - scale)
        return cone

    def add_norm_le(self, f_terms, bound):
        """Impose ``||sum_i F_i x_i|| <= bound`` for a constant bound."""
        f_terms = [(sl, np.atleast_2d(np.asarray(F, dtype=float)))
                   for sl, F in f_terms]
        r = f_terms[0][1].shape[0]
        cone = self.variable("soc", r + 1)
        t = slice(cone.start, cone.start + 1)
        z = slice(cone.start + 1, cone.stop)
        self.equality([(t, [1.0])], float(bound))
        self.equality([(z, np.eye(r))] + [(sl, -F) for sl, F in f_terms],
                      np.zeros(r))
        return cone

    def build(self):
        c = np.zeros(self._n)
        for (a, b_), vec in self._cost.items():
            c[a:b_] += vec
        n_rows = sum(rhs.size for _, rhs in self._rows)
        A = np.zeros((n_rows, self._n))
        b = np.zeros(n_rows)
        row = 0
        for mats, rhs in self._rows:
            k = rhs.size
            for sl, M in mats:
                A[row:row + k, sl] += M
            b[row:row + k] = rhs
            row += k
        return ConicProblem(c, A, b, list(self._cones))
