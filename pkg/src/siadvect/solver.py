"""Matrix-free fast sweeping solver for the assembled implicit systems.

A time step is stored as per-node coefficient vectors over a fixed offset
footprint (axis offsets up to two nodes plus the four corner diagonals).
The linear system is solved by Gauss-Seidel passes swept in alternating
index orders; for upwind-dominated rows one or two sweeps already give the
solution to discretization accuracy, which is how the production runs use it.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

# (di, dj) footprint shared by every scheme here; row coefficient k acts on
# the neighbour at (i + di, j + dj).
STENCIL_OFFSETS = np.array([
    (0, 0),
    (-1, 0), (1, 0), (-2, 0), (2, 0),
    (0, -1), (0, 1), (0, -2), (0, 2),
    (-1, -1), (1, -1), (-1, 1), (1, 1),
], dtype=np.int64)

OFFSET_INDEX = {(int(di), int(dj)): k for k, (di, dj) in enumerate(STENCIL_OFFSETS)}

# sweep orders: (x direction, y direction)
SWEEP_ORDERS_2D = ((1, 1), (-1, 1), (1, -1), (-1, -1))
SWEEP_ORDERS_1D = ((1, 1), (-1, 1))


class AssemblyError(RuntimeError):
    pass


@dataclass
class LinearStep:
    """One implicit system: A-coefficients, right hand side and solve mask.

    Pinned nodes carry externally known values (boundary data at the new
    time level); they are excluded from the mask and installed into the
    iterate before sweeping.
    """

    A: np.ndarray            # (ny, nx, K) implicit coefficients
    rhs: np.ndarray          # (ny, nx)
    mask: np.ndarray         # (ny, nx) bool, nodes updated by the solver
    offsets: np.ndarray = None
    pinned_idx: np.ndarray = None      # (P, 2) as (j, i)
    pinned_values: np.ndarray = None   # (P,)

    def __post_init__(self):
        if self.offsets is None:
            self.offsets = STENCIL_OFFSETS
        if self.pinned_idx is None:
            self.pinned_idx = np.zeros((0, 2), dtype=np.int64)
            self.pinned_values = np.zeros(0)

    def install_pinned(self, u: np.ndarray):
        if self.pinned_idx.shape[0]:
            u[self.pinned_idx[:, 0], self.pinned_idx[:, 1]] = self.pinned_values


@dataclass(frozen=True)
class SweepPolicy:
    """Either a fixed number of sweeps or sweep-until-residual-tolerance."""

    mode: str
    sweeps: int = 1
    tol: float = 0.0
    max_sweeps: int = 100

    @classmethod
    def fixed(cls, sweeps: int) -> "SweepPolicy":
        if sweeps < 1:
            raise ValueError("need at least one sweep")
        return cls("fixed", sweeps=sweeps)

    @classmethod
    def tolerance(cls, tol: float, max_sweeps: int = 100) -> "SweepPolicy":
        if not tol > 0:
            raise ValueError("tolerance must be positive")
        return cls("tolerance", tol=tol, max_sweeps=max_sweeps)


@dataclass
class SolveInfo:
    sweeps: int
    residual: float
    converged: bool


@njit(cache=True)
def _gs_pass(A, rhs, mask, u, offs, sx, sy):
    ny, nx, K = A.shape
    for jj in range(ny):
        j = jj if sy > 0 else ny - 1 - jj
        for ii in range(nx):
            i = ii if sx > 0 else nx - 1 - ii
            if not mask[j, i]:
                continue
            acc = rhs[j, i]
            diag = 0.0
            for k in range(K):
                a = A[j, i, k]
                if a == 0.0:
                    continue
                di = offs[k, 0]
                dj = offs[k, 1]
                if di == 0 and dj == 0:
                    diag = a
                    continue
                iq = i + di
                jq = j + dj
                if 0 <= iq < nx and 0 <= jq < ny:
                    acc -= a * u[jq, iq]
            u[j, i] = acc / diag


@njit(cache=True)
def _contract(B, u, offs, out):
    ny, nx, K = B.shape
    for j in range(ny):
        for i in range(nx):
            acc = 0.0
            for k in range(K):
                b = B[j, i, k]
                if b == 0.0:
                    continue
                di = offs[k, 0]
                dj = offs[k, 1]
                iq = i + di
                jq = j + dj
                if 0 <= iq < nx and 0 <= jq < ny:
                    acc += b * u[jq, iq]
            out[j, i] = acc
    return out


@njit(cache=True)
def _residual_max(A, rhs, mask, u, offs):
    ny, nx, K = A.shape
    worst = 0.0
    for j in range(ny):
        for i in range(nx):
            if not mask[j, i]:
                continue
            acc = -rhs[j, i]
            for k in range(K):
                a = A[j, i, k]
                if a == 0.0:
                    continue
                di = offs[k, 0]
                dj = offs[k, 1]
                iq = i + di
                jq = j + dj
                if 0 <= iq < nx and 0 <= jq < ny:
                    acc += a * u[jq, iq]
            if abs(acc) > worst:
                worst = abs(acc)
    return worst


def contract_explicit(B: np.ndarray, u: np.ndarray,
                      offsets: np.ndarray = None) -> np.ndarray:
    """Apply the explicit coefficient array to a field: out = B * u."""
    if offsets is None:
        offsets = STENCIL_OFFSETS
    out = np.zeros_like(u)
    _contract(B, np.ascontiguousarray(u), offsets, out)
    return out


def gauss_seidel_pass(step: LinearStep, u: np.ndarray, order=(1, 1)):
    """Single in-place Gauss-Seidel pass over the masked nodes."""
    sx, sy = order
    _gs_pass(step.A, step.rhs, step.mask, u, step.offsets, sx, sy)
    return u


def residual(step: LinearStep, u: np.ndarray) -> float:
    """Max-norm residual of the implicit system over the masked nodes."""
    return float(_residual_max(step.A, step.rhs, step.mask, u, step.offsets))


def fast_sweep_solve(step: LinearStep, u_init: np.ndarray,
                     policy: SweepPolicy = None, dim: int = 2):
    """Solve one implicit step starting from u_init (typically U^n).

    One sweep is a cycle of Gauss-Seidel passes over alternating index
    orders: four orders in 2D, two in 1D.  Returns (u, SolveInfo).
    """
    if policy is None:
        policy = SweepPolicy.fixed(1)
    orders = SWEEP_ORDERS_1D if dim == 1 else SWEEP_ORDERS_2D
    u = np.array(u_init, dtype=np.float64, copy=True)
    step.install_pinned(u)
    if policy.mode == "fixed":
        for _ in range(policy.sweeps):
            for order in orders:
                gauss_seidel_pass(step, u, order)
        res = residual(step, u)
        return u, SolveInfo(policy.sweeps, res, True)
    done = 0
    res = residual(step, u)
    while res > policy.tol and done < policy.max_sweeps:
        for order in orders:
            gauss_seidel_pass(step, u, order)
        done += 1
        res = residual(step, u)
    return u, SolveInfo(done, res, res <= policy.tol)


def validate_coefficients(A: np.ndarray, mask: np.ndarray,
                          offsets: np.ndarray = None, label: str = "A"):
    """Check that no masked row references a node outside the grid.

    The sweep kernels skip out-of-range references, so assembly bugs would
    otherwise be silently absorbed; this turns them into hard errors.
    """
    if offsets is None:
        offsets = STENCIL_OFFSETS
    ny, nx, K = A.shape
    for k in range(K):
        di, dj = int(offsets[k, 0]), int(offsets[k, 1])
        bad = np.zeros((ny, nx), dtype=bool)
        if di < 0:
            bad[:, :(-di)] = True
        elif di > 0:
            bad[:, nx - di:] = True
        if dj < 0:
            bad[:(-dj), :] |= True
        elif dj > 0:
            bad[ny - dj:, :] |= True
        hit = bad & mask & (A[:, :, k] != 0.0)
        if np.any(hit):
            j, i = np.argwhere(hit)[0]
            raise AssemblyError(
                f"{label} row at node (i={i}, j={j}) references out-of-grid "
                f"offset ({di}, {dj})")


def dense_matrix(step: LinearStep) -> tuple:
    """Expand the step into a dense (n x n) system over masked nodes.

    Reference oracle for small grids: pinned and unmasked node values are
    moved to the right hand side, which therefore needs the iterate holding
    those values.  Returns (matrix, index map) where index map flattens
    (j, i) -> equation number.
    """
    ny, nx, K = step.A.shape
    idx = -np.ones((ny, nx), dtype=np.int64)
    nodes = np.argwhere(step.mask)
    for n, (j, i) in enumerate(nodes):
        idx[j, i] = n
    n_eq = len(nodes)
    mat = np.zeros((n_eq, n_eq))
    for n, (j, i) in enumerate(nodes):
        for k in range(K):
            a = step.A[j, i, k]
            if a == 0.0:
                continue
            di, dj = int(step.offsets[k, 0]), int(step.offsets[k, 1])
            iq, jq = i + di, j + dj
            if not (0 <= iq < nx and 0 <= jq < ny):
                continue
            m = idx[jq, iq]
            if m >= 0:
                mat[n, m] += a
    return mat, idx


def dense_solve(step: LinearStep, u_frame: np.ndarray) -> np.ndarray:
    """Direct dense solve of the step; u_frame supplies pinned/unmasked values."""
    u = np.array(u_frame, dtype=np.float64, copy=True)
    step.install_pinned(u)
    mat, idx = dense_matrix(step)
    ny, nx, K = step.A.shape
    nodes = np.argwhere(step.mask)
    rhs = np.zeros(len(nodes))
    for n, (j, i) in enumerate(nodes):
        acc = step.rhs[j, i]
        for k in range(K):
            a = step.A[j, i, k]
            if a == 0.0:
                continue
            di, dj = int(step.offsets[k, 0]), int(step.offsets[k, 1])
            iq, jq = i + di, j + dj
            if not (0 <= iq < nx and 0 <= jq < ny):
                continue
            if idx[jq, iq] < 0:
                acc -= a * u[jq, iq]
        rhs[n] = acc
    sol = np.linalg.solve(mat, rhs)
    for n, (j, i) in enumerate(nodes):
        u[j, i] = sol[n]
    return u
