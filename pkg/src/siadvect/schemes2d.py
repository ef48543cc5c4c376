"""Two-dimensional schemes, CTU corner extension and boundary assembly.

The axis terms reuse the 1D coefficient formulas dimension by dimension; the
CTU variants add corner (diagonal) contributions whose convex blend is
controlled by theta.  Domains are either the full rectangle, with per-node
edge policies derived from the velocity direction, or implicitly given as
the negative region of a level-set function phi, with cut-cell crossings
closed by linear interpolation toward the Dirichlet boundary data.

build_operator produces a reusable StepOperator: dense per-node coefficient
arrays over the fixed stencil footprint plus records for time-dependent
boundary values, so stationary-velocity runs assemble once per run.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import Grid2D, VelocityField, courant_numbers
from .schemes1d import (Kappa, StencilRow, fold_linear_targets, kappa_value,
                        semi_implicit_axis_coeffs)
from .schemes1d import assemble_implicit_row_1d, assemble_semi_implicit_row_1d
from .solver import (OFFSET_INDEX, STENCIL_OFFSETS, AssemblyError, LinearStep,
                     contract_explicit, validate_coefficients)

FAMILIES = ("semi_implicit_1d", "fully_implicit_1d", "semi_implicit_2d", "ctu")

# crossings closer than GAMMA_SNAP (in units of h) to a grid node collapse
# to a Dirichlet value at that node; avoids dividing by 1 - gamma ~ 0
GAMMA_SNAP = 1e-6


@dataclass(frozen=True)
class SchemeSpec:
    """Scheme family plus per-axis kappa choices and the CTU blend theta."""

    family: str
    kappa_x: Kappa
    kappa_y: Kappa
    theta: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown scheme family {self.family!r}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta={self.theta} outside [0, 1]")

    @property
    def dim(self) -> int:
        return 1 if self.family.endswith("_1d") else 2

    @classmethod
    def semi_implicit_1d(cls, kappa: Kappa) -> "SchemeSpec":
        return cls("semi_implicit_1d", kappa, kappa)

    @classmethod
    def fully_implicit_1d(cls, kappa: Kappa) -> "SchemeSpec":
        return cls("fully_implicit_1d", kappa, kappa)

    @classmethod
    def semi_implicit_2d(cls, kappa_x: Kappa, kappa_y: Kappa = None) -> "SchemeSpec":
        return cls("semi_implicit_2d", kappa_x, kappa_y or kappa_x)

    @classmethod
    def ctu(cls, kappa_x: Kappa, kappa_y: Kappa = None,
            theta: float = 1.0) -> "SchemeSpec":
        return cls("ctu", kappa_x, kappa_y or kappa_x, theta)


@dataclass
class ImplicitDomain:
    """Solve region {phi < 0} with Dirichlet data u^D(x, y, t) on its boundary.

    When the analytic level set phi_fn is kept, boundary crossings are
    located by root finding on it; otherwise they come from linear
    interpolation of the nodal values.
    """

    phi: np.ndarray
    dirichlet: object
    phi_fn: object = None

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if not np.any(self.phi < 0):
            raise ValueError("empty domain: phi is nowhere negative")

    @classmethod
    def from_function(cls, grid: Grid2D, phi_fn, dirichlet) -> "ImplicitDomain":
        X, Y = grid.meshgrid()
        return cls(np.asarray(phi_fn(X, Y), dtype=np.float64), dirichlet,
                   phi_fn=phi_fn)


@dataclass(frozen=True)
class RectBoundary:
    """Edge policy for rectangular domains.

    Per-node behaviour follows the velocity direction: inflow edge nodes are
    pinned to value_fn, zero normal velocity leaves the natural identity row,
    outflow nodes are solved with extrapolated ghosts.  exact_ghosts redirects
    every out-of-grid reference to value_fn too (verification runs where the
    solution is known in closed form).
    """

    value_fn: object = None
    exact_ghosts: bool = False

    def __post_init__(self):
        if self.exact_ghosts and self.value_fn is None:
            raise ValueError("exact_ghosts needs value_fn")


class NodeClass(Enum):
    OUTSIDE = "outside"
    INTERIOR_FULL = "interior_full"
    NEAR_BOUNDARY = "near_boundary"


def classify_node(i: int, j: int, phi: np.ndarray, footprint) -> NodeClass:
    """Classify by the phi signs under the row's nonzero-coefficient offsets."""
    if phi[j, i] >= 0:
        return NodeClass.OUTSIDE
    ny, nx = phi.shape
    for di, dj in footprint:
        iq, jq = i + di, j + dj
        if not (0 <= iq < nx and 0 <= jq < ny):
            return NodeClass.NEAR_BOUNDARY
        if phi[jq, iq] > 0:
            return NodeClass.NEAR_BOUNDARY
    return NodeClass.INTERIOR_FULL


def row_footprint(row: StencilRow) -> tuple:
    offs = set(row.implicit) | set(row.explicit)
    return tuple(sorted(offs))


def assemble_semi_implicit_row_2d(i: int, j: int, velocity: VelocityField,
                                  tau: float, h: float, kappa_x: Kappa,
                                  kappa_y: Kappa) -> StencilRow:
    """Interior 2D semi-implicit row: the two axis terms share one diagonal."""
    c = tau * velocity.vx[j, i] / h
    d = tau * velocity.vy[j, i] / h
    row = StencilRow(index=(i, j), implicit={(0, 0): 1.0}, explicit={(0, 0): 1.0})
    for courant, choice, ax in ((c, kappa_x, 0), (d, kappa_y, 1)):
        imp, exp = semi_implicit_axis_coeffs(courant, kappa_value(choice, courant))
        for off, val in imp.items():
            row.add_implicit((off, 0) if ax == 0 else (0, off), val)
        for off, val in exp.items():
            row.add_explicit((off, 0) if ax == 0 else (0, off), val)
    return row


def ctu_corner_terms(c: float, d: float, theta: float) -> tuple:
    """Corner contributions shared/blended by the two CTU variants.

    The implicit part is common to both variants; theta blends only the
    explicit diagonals.  Every group annihilates constants.
    """
    prod = abs(c * d)
    if prod == 0.0:
        return {}, {}
    sx = 1 if c > 0 else -1
    sy = 1 if d > 0 else -1
    q = prod / 6.0
    p = prod / 12.0
    imp = {(0, 0): q, (-sx, -sy): q, (-sx, 0): -q, (0, -sy): -q}
    exp = {}

    def bump(off, v):
        if v != 0.0:
            exp[off] = exp.get(off, 0.0) + v

    bump((0, 0), theta * 2.0 * p)
    bump((sx, sy), theta * p)
    bump((-sx, -sy), theta * p)
    bump((0, 0), -(1.0 - theta) * 2.0 * p)
    bump((-sx, sy), -(1.0 - theta) * p)
    bump((sx, -sy), -(1.0 - theta) * p)
    for off in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        bump(off, (1.0 - 2.0 * theta) * p)
    return imp, {k: v for k, v in exp.items() if v != 0.0}


def assemble_ctu_row(i: int, j: int, velocity: VelocityField, tau: float,
                     h: float, kappa_x: Kappa, kappa_y: Kappa,
                     theta: float = 1.0) -> StencilRow:
    """Semi-implicit 2D row plus the corner transport terms."""
    row = assemble_semi_implicit_row_2d(i, j, velocity, tau, h, kappa_x, kappa_y)
    c = tau * velocity.vx[j, i] / h
    d = tau * velocity.vy[j, i] / h
    imp, exp = ctu_corner_terms(c, d, theta)
    for off, val in imp.items():
        row.add_implicit(off, val)
    for off, val in exp.items():
        row.add_explicit(off, val)
    return row


def interior_row(i: int, j: int, velocity: VelocityField, tau: float, h: float,
                 scheme: SchemeSpec) -> StencilRow:
    if scheme.family == "semi_implicit_1d":
        row = assemble_semi_implicit_row_1d(i, velocity.vx[j], tau, h,
                                            scheme.kappa_x)
    elif scheme.family == "fully_implicit_1d":
        row = assemble_implicit_row_1d(i, velocity.vx[j], tau, h, scheme.kappa_x)
    elif scheme.family == "semi_implicit_2d":
        return assemble_semi_implicit_row_2d(i, j, velocity, tau, h,
                                             scheme.kappa_x, scheme.kappa_y)
    else:
        return assemble_ctu_row(i, j, velocity, tau, h, scheme.kappa_x,
                                scheme.kappa_y, scheme.theta)
    row.index = (i, j)
    return row


def boundary_gamma(phi_in: float, phi_out: float) -> float:
    """Linear-interpolation crossing fraction, measured from the outside node.

    The zero of phi between an inside node (phi_in < 0) and its outside
    neighbour (phi_out > 0) sits at distance gamma*h from the outside node.
    Values below GAMMA_SNAP or above 1 - GAMMA_SNAP are handled by the
    caller as node-coincident crossings rather than clamped here.
    """
    if not (phi_in < 0.0 < phi_out):
        raise ValueError(f"no sign change: phi_in={phi_in}, phi_out={phi_out}")
    return phi_out / (phi_out - phi_in)


def apply_inflow_substitution(row: StencilRow, off: tuple, gamma: float,
                              u_value: float) -> StencilRow:
    """Eliminate an outside implicit reference through the boundary value.

    The outside value is expressed from the linear interpolation
    u^D = gamma*U_in + (1-gamma)*U_out, so the coefficient a moves onto the
    diagonal as -a*gamma/(1-gamma) and -a*u^D/(1-gamma) joins the rhs.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma={gamma} outside (0, 1)")
    a = row.implicit.pop(off)
    row.add_implicit((0, 0), -a * gamma / (1.0 - gamma))
    row.rhs_extra += -a * u_value / (1.0 - gamma)
    return row


def outflow_extrapolate(values: np.ndarray, i: int, j: int, di: int, dj: int,
                        usable: np.ndarray = None) -> float:
    """Ghost value beyond (i, j) in direction (di, dj) at the old time level.

    Linear extrapolation 2*U_ij - U_donor from the opposite neighbour; falls
    back to the constant U_ij when the donor is missing or unusable.
    """
    ny, nx = values.shape
    id_, jd = i - di, j - dj
    if 0 <= id_ < nx and 0 <= jd < ny and (usable is None or usable[jd, id_]):
        return 2.0 * values[j, i] - values[jd, id_]
    return float(values[j, i])


@dataclass
class StepOperator:
    """Assembled time-step operator, reusable across steps.

    A and B hold implicit/explicit coefficients per node and stencil slot.
    Boundary data that depends on time is kept symbolically: pinned nodes
    store their evaluation point, rhs records store (factor, point, level)
    with level new/old for implicit/explicit ghost contributions.
    """

    grid: Grid2D
    scheme: SchemeSpec
    tau: float
    A: np.ndarray
    B: np.ndarray
    mask: np.ndarray
    outside: np.ndarray
    pin_idx: np.ndarray
    pin_x: np.ndarray
    pin_y: np.ndarray
    rec_idx: np.ndarray
    rec_factor: np.ndarray
    rec_x: np.ndarray
    rec_y: np.ndarray
    rec_new: np.ndarray
    value_fn: object
    stats: dict = field(default_factory=dict)

    def make_step(self, values_n: np.ndarray, t_old: float = 0.0,
                  t_new: float = None) -> LinearStep:
        if t_new is None:
            t_new = t_old + self.tau
        rhs = contract_explicit(self.B, values_n)
        if self.rec_idx.shape[0]:
            contrib = np.empty(self.rec_idx.shape[0])
            new = self.rec_new
            if new.any():
                contrib[new] = self.rec_factor[new] * self.value_fn(
                    self.rec_x[new], self.rec_y[new], t_new)
            old = ~new
            if old.any():
                contrib[old] = self.rec_factor[old] * self.value_fn(
                    self.rec_x[old], self.rec_y[old], t_old)
            np.add.at(rhs, (self.rec_idx[:, 0], self.rec_idx[:, 1]), contrib)
        if self.pin_idx.shape[0]:
            pin_values = np.asarray(
                self.value_fn(self.pin_x, self.pin_y, t_new),
                dtype=np.float64) + np.zeros(self.pin_idx.shape[0])
        else:
            pin_values = np.zeros(0)
        return LinearStep(self.A, rhs, self.mask, STENCIL_OFFSETS,
                          self.pin_idx, pin_values)


class _Recorder:
    """Accumulates pins and rhs records during assembly."""

    def __init__(self):
        self.pin = []      # (j, i, x, y)
        self.rec = []      # (j, i, factor, x, y, new_level)

    def pin_node(self, j, i, x, y):
        self.pin.append((j, i, x, y))

    def record(self, j, i, factor, x, y, new_level):
        self.rec.append((j, i, factor, x, y, new_level))


def _axis_semi_implicit_bulk(A, B, c, kap, axis):
    """Vectorized axis terms of the semi-implicit scheme added in place."""
    cm = np.abs(c)
    s = np.sign(c)
    pos = c > 0
    neg = c < 0

    def slot(o):
        return OFFSET_INDEX[(o, 0) if axis == 0 else (0, o)]

    A[:, :, 0] += cm - cm * (1.0 + s * kap) / 4.0
    v1 = -cm + s * cm * kap / 2.0
    v2 = cm * (1.0 - s * kap) / 4.0
    A[:, :, slot(-1)][pos] += v1[pos]
    A[:, :, slot(1)][neg] += v1[neg]
    A[:, :, slot(-2)][pos] += v2[pos]
    A[:, :, slot(2)][neg] += v2[neg]
    B[:, :, slot(-1)] += c * (1.0 - kap) / 4.0
    B[:, :, 0] += c * kap / 2.0
    B[:, :, slot(1)] += -c * (1.0 + kap) / 4.0


def _ctu_corner_bulk(A, B, C, D, theta):
    prod = np.abs(C * D)
    q = prod / 6.0
    p = prod / 12.0
    A[:, :, 0] += q
    B[:, :, 0] += (2.0 * theta - 1.0) * 2.0 * p
    for off in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        B[:, :, OFFSET_INDEX[off]] += (1.0 - 2.0 * theta) * p
    quadrants = (((C > 0) & (D > 0), 1, 1), ((C > 0) & (D < 0), 1, -1),
                 ((C < 0) & (D > 0), -1, 1), ((C < 0) & (D < 0), -1, -1))
    for m, sx, sy in quadrants:
        if not m.any():
            continue
        A[:, :, OFFSET_INDEX[(-sx, -sy)]][m] += q[m]
        A[:, :, OFFSET_INDEX[(-sx, 0)]][m] -= q[m]
        A[:, :, OFFSET_INDEX[(0, -sy)]][m] -= q[m]
        B[:, :, OFFSET_INDEX[(sx, sy)]][m] += theta * p[m]
        B[:, :, OFFSET_INDEX[(-sx, -sy)]][m] += theta * p[m]
        B[:, :, OFFSET_INDEX[(-sx, sy)]][m] -= (1.0 - theta) * p[m]
        B[:, :, OFFSET_INDEX[(sx, -sy)]][m] -= (1.0 - theta) * p[m]


def _fully_implicit_bulk(A, B, c, choice):
    """Vectorized fully implicit rows; the explicit side is the identity."""
    shift_r = np.empty_like(c)
    shift_r[:, 1:] = c[:, :-1]
    shift_r[:, 0] = c[:, 0]
    shift_l = np.empty_like(c)
    shift_l[:, :-1] = c[:, 1:]
    shift_l[:, -1] = c[:, -1]
    c_up = np.where(c > 0, shift_r, shift_l)
    s = np.sign(c)
    k = kappa_value(choice, c)
    ku = kappa_value(choice, c_up)
    f = s * (1.0 + s * c) / 4.0
    fu = s * (1.0 + s * c_up) / 4.0
    here_m1, here_0, here_p1 = -f * (1.0 - k), 1.0 - 2.0 * f * k, f * (1.0 + k)
    there_m1, there_0, there_p1 = (-fu * (1.0 - ku), 1.0 - 2.0 * fu * ku,
                                   fu * (1.0 + ku))
    cm = np.abs(c)
    pos = c > 0
    neg = c < 0
    A[:, :, 0] += cm * here_0 - cm * np.where(pos, there_p1, there_m1)
    A[:, :, OFFSET_INDEX[(-1, 0)]][pos] += (cm * (here_m1 - there_0))[pos]
    A[:, :, OFFSET_INDEX[(-2, 0)]][pos] += (-cm * there_m1)[pos]
    A[:, :, OFFSET_INDEX[(1, 0)]][pos] += (cm * here_p1)[pos]
    A[:, :, OFFSET_INDEX[(1, 0)]][neg] += (cm * (here_p1 - there_0))[neg]
    A[:, :, OFFSET_INDEX[(2, 0)]][neg] += (-cm * there_p1)[neg]
    A[:, :, OFFSET_INDEX[(-1, 0)]][neg] += (cm * here_m1)[neg]


def _bulk_coefficients(grid, velocity, tau, scheme):
    ny, nx = grid.shape
    K = STENCIL_OFFSETS.shape[0]
    A = np.zeros((ny, nx, K))
    B = np.zeros((ny, nx, K))
    A[:, :, 0] = 1.0
    B[:, :, 0] = 1.0
    C, D = courant_numbers(velocity, tau, grid.h)
    if scheme.family == "fully_implicit_1d":
        _fully_implicit_bulk(A, B, C, scheme.kappa_x)
        return A, B, C, D
    _axis_semi_implicit_bulk(A, B, C, kappa_value(scheme.kappa_x, C), axis=0)
    if scheme.dim == 2:
        _axis_semi_implicit_bulk(A, B, D, kappa_value(scheme.kappa_y, D), axis=1)
        if scheme.family == "ctu":
            _ctu_corner_bulk(A, B, C, D, scheme.theta)
    return A, B, C, D


def _write_row(A, B, i, j, row: StencilRow):
    A[j, i, :] = 0.0
    B[j, i, :] = 0.0
    for off, v in row.implicit.items():
        A[j, i, OFFSET_INDEX[off]] = v
    for off, v in row.explicit.items():
        B[j, i, OFFSET_INDEX[off]] = v


def _node_xy(grid, i, j):
    x = grid.x_min + i * grid.h
    y = grid.y_min + j * grid.h if grid.dim == 2 else 0.0
    return x, y


def _normal_floor(velocity) -> float:
    """Edge normal velocities below this count as exact zeros.

    Fields like the single vortex vanish on the boundary only up to
    roundoff of sin(pi); without the dead band such edges would be
    classified as inflow by sign noise.
    """
    scale = max(float(np.abs(velocity.vx).max()),
                float(np.abs(velocity.vy).max()))
    return 1e-12 * scale


def _rect_pinned(grid, velocity, i, j, floor: float = 0.0) -> bool:
    if i == 0 and velocity.vx[j, i] > floor:
        return True
    if i == grid.nx - 1 and velocity.vx[j, i] < -floor:
        return True
    if grid.dim == 2:
        if j == 0 and velocity.vy[j, i] > floor:
            return True
        if j == grid.ny - 1 and velocity.vy[j, i] < -floor:
            return True
    return False


def _ghost_side_inflow(grid, velocity, iq, jq, floor: float = 0.0) -> bool:
    """Whether an out-of-grid reference lies beyond an inflow portion of the edge."""
    nx, ny = grid.nx, grid.ny
    ic = min(max(iq, 0), nx - 1)
    jc = min(max(jq, 0), ny - 1)
    if iq < 0 and velocity.vx[jc, 0] > floor:
        return True
    if iq > nx - 1 and velocity.vx[jc, nx - 1] < -floor:
        return True
    if grid.dim == 2:
        if jq < 0 and velocity.vy[0, ic] > floor:
            return True
        if jq > ny - 1 and velocity.vy[ny - 1, ic] < -floor:
            return True
    return False


def _fold_ghost(grid, i, j, off) -> list:
    """Express an out-of-grid reference through in-grid nodes.

    Axis ghosts extrapolate linearly along their axis (exact on linears);
    diagonal ghosts first apply the bilinear corner identity toward the base
    node, then close any remaining axis ghosts the same way.  Returns
    ((iq, jq), weight) pairs.
    """
    nx, ny = grid.nx, grid.ny
    di, dj = off
    iq, jq = i + di, j + dj
    if di != 0 and dj != 0:
        parts = [((i, jq), 1.0), ((iq, j), 1.0), ((i, j), -1.0)]
    else:
        parts = [((iq, jq), 1.0)]
    acc = {}
    for (a, b), w in parts:
        for ia, wx in fold_linear_targets(a, 0, nx - 1):
            for jb, wy in fold_linear_targets(b, 0, ny - 1):
                key = (ia, jb)
                acc[key] = acc.get(key, 0.0) + w * wx * wy
    return [(k, v) for k, v in acc.items() if v != 0.0]


def _close_rect_row(row, grid, velocity, rect, rec: _Recorder, i, j,
                    floor: float = 0.0):
    """Resolve the row's out-of-grid references per the edge policy."""
    nx, ny = grid.nx, grid.ny
    for off, a in list(row.implicit.items()):
        iq, jq = i + off[0], j + off[1]
        if 0 <= iq < nx and 0 <= jq < ny:
            continue
        del row.implicit[off]
        x, y = _node_xy(grid, iq, jq)
        inflow = _ghost_side_inflow(grid, velocity, iq, jq, floor)
        if rect.value_fn is not None and (rect.exact_ghosts or inflow):
            rec.record(j, i, -a, x, y, True)
            continue
        if inflow:
            raise AssemblyError(
                f"node (i={i}, j={j}) needs boundary values beyond an inflow "
                "edge but none were given")
        for (iq2, jq2), w in _fold_ghost(grid, i, j, off):
            row.add_implicit((iq2 - i, jq2 - j), a * w)
    for off, b in list(row.explicit.items()):
        iq, jq = i + off[0], j + off[1]
        if 0 <= iq < nx and 0 <= jq < ny:
            continue
        del row.explicit[off]
        x, y = _node_xy(grid, iq, jq)
        inflow = _ghost_side_inflow(grid, velocity, iq, jq, floor)
        if rect.value_fn is not None and (rect.exact_ghosts or inflow):
            rec.record(j, i, b, x, y, False)
            continue
        for (iq2, jq2), w in _fold_ghost(grid, i, j, off):
            row.add_explicit((iq2 - i, jq2 - j), b * w)


def _refine_gamma(phi_fn, x_in, y_in, x_out, y_out, gamma0: float) -> float:
    """Bisect the analytic level set along the cell edge; gamma0 on failure."""
    ta, tb = 0.0, 1.0
    fa = float(phi_fn(np.float64(x_in), np.float64(y_in)))
    fb = float(phi_fn(np.float64(x_out), np.float64(y_out)))
    if not (fa < 0.0 < fb):
        return gamma0
    for _ in range(60):
        tm = 0.5 * (ta + tb)
        fm = float(phi_fn(np.float64(x_in + tm * (x_out - x_in)),
                          np.float64(y_in + tm * (y_out - y_in))))
        if fm < 0.0:
            ta = tm
        else:
            tb = tm
    return 1.0 - 0.5 * (ta + tb)


def _axis_dirty(imp, exp, nx, ny, i, j, ax, phi=None) -> bool:
    """True when a nonzero axis coefficient lands off-grid or on phi > 0."""
    for off, val in list(imp.items()) + list(exp.items()):
        if off == 0 or val == 0.0:
            continue
        iq = i + off if ax == 0 else i
        jq = j if ax == 0 else j + off
        if not (0 <= iq < nx and 0 <= jq < ny):
            return True
        if phi is not None and phi[jq, iq] > 0:
            return True
    return False


def _per_axis_row(grid, velocity, tau, i, j, scheme, phi=None) -> StencilRow:
    """Degraded-stencil row used wherever the scheme cannot fit whole.

    Each axis keeps the scheme's kappa when its own stencil is clean and
    drops to kappa = sign (the two-point upwind stencil) otherwise; the
    leftover out-of-domain references are resolved by the caller.  Corner
    cross terms are left off: their weights scale with Cx*Cy and feed on
    whatever closure the edge uses, which destabilises large-Courant runs.
    """
    h = grid.h
    cx = tau * velocity.vx[j, i] / h
    cy = tau * velocity.vy[j, i] / h
    row = StencilRow(index=(i, j), implicit={(0, 0): 1.0}, explicit={(0, 0): 1.0})
    for courant, choice, ax in ((cx, scheme.kappa_x, 0), (cy, scheme.kappa_y, 1)):
        imp, exp = semi_implicit_axis_coeffs(courant, kappa_value(choice, courant))
        if _axis_dirty(imp, exp, grid.nx, grid.ny, i, j, ax, phi):
            imp, exp = semi_implicit_axis_coeffs(courant, float(np.sign(courant)))
        for off, val in imp.items():
            row.add_implicit((off, 0) if ax == 0 else (0, off), val)
        for off, val in exp.items():
            row.add_explicit((off, 0) if ax == 0 else (0, off), val)
    return row


def _near_boundary_row(grid, velocity, tau, phi, rec: _Recorder, i, j, stats,
                       scheme: SchemeSpec, phi_fn=None):
    """Cut-cell fallback row built axis by axis.

    An axis whose stencil stays on phi <= 0 keeps the scheme's kappa choice;
    a dirty axis drops to kappa = sign (the two-point stencil) and the
    remaining crossings are closed by substitution or extrapolation.  Falling
    back on both axes regardless would widen the degraded ring and visibly
    pollute third-order runs on coarse grids.

    Returns the row, or None when the node collapses onto the boundary
    (crossing within GAMMA_SNAP of the node) and is pinned instead.
    """
    h = grid.h
    cx = tau * velocity.vx[j, i] / h
    cy = tau * velocity.vy[j, i] / h
    row = _per_axis_row(grid, velocity, tau, i, j, scheme, phi)
    nx, ny = grid.nx, grid.ny
    x0, y0 = _node_xy(grid, i, j)
    for off, a in list(row.implicit.items()):
        if off == (0, 0):
            continue
        iq, jq = i + off[0], j + off[1]
        if not (0 <= iq < nx and 0 <= jq < ny):
            raise AssemblyError(
                f"cut-cell row at (i={i}, j={j}) leaves the grid at offset {off}")
        if phi[jq, iq] <= 0:
            continue
        gamma = boundary_gamma(phi[j, i], phi[jq, iq])
        xq, yq = _node_xy(grid, iq, jq)
        if phi_fn is not None:
            gamma = _refine_gamma(phi_fn, x0, y0, xq, yq, gamma)
        if gamma > 1.0 - GAMMA_SNAP:
            # boundary passes through the node itself
            rec.pin_node(j, i, gamma * x0 + (1 - gamma) * xq,
                         gamma * y0 + (1 - gamma) * yq)
            return None
        del row.implicit[off]
        if gamma < GAMMA_SNAP:
            rec.record(j, i, -a, xq, yq, True)
            continue
        row.add_implicit((0, 0), -a * gamma / (1.0 - gamma))
        rec.record(j, i, -a / (1.0 - gamma),
                   gamma * x0 + (1 - gamma) * xq,
                   gamma * y0 + (1 - gamma) * yq, True)
        courant = cx if off[1] == 0 else cy
        stats["max_cut_courant"] = max(stats["max_cut_courant"],
                                       abs(courant) / (1.0 - gamma))
        stats["min_inside_gap"] = min(stats["min_inside_gap"], 1.0 - gamma)
        stats["min_gamma"] = min(stats["min_gamma"], gamma)
    for off, b in list(row.explicit.items()):
        if off == (0, 0):
            continue
        iq, jq = i + off[0], j + off[1]
        if not (0 <= iq < nx and 0 <= jq < ny):
            raise AssemblyError(
                f"cut-cell row at (i={i}, j={j}) leaves the grid at offset {off}")
        if phi[jq, iq] <= 0:
            continue
        del row.explicit[off]
        id_, jd = i - off[0], j - off[1]
        if 0 <= id_ < nx and 0 <= jd < ny and phi[jd, id_] <= 0:
            row.add_explicit((0, 0), 2.0 * b)
            row.add_explicit((-off[0], -off[1]), -b)
        else:
            row.add_explicit((0, 0), b)
    return row


def _interior_full_clean(phi) -> np.ndarray:
    """Nodes whose full stencil footprint is in-grid with phi <= 0 everywhere."""
    ny, nx = phi.shape
    padded = np.full((ny + 4, nx + 4), 1.0)
    padded[2:-2, 2:-2] = phi
    ok = np.ones((ny, nx), dtype=bool)
    for di, dj in STENCIL_OFFSETS:
        ok &= padded[2 + dj:2 + dj + ny, 2 + di:2 + di + nx] <= 0
    return (phi < 0) & ok


def build_operator(grid: Grid2D, velocity: VelocityField, tau: float,
                   scheme: SchemeSpec, domain: ImplicitDomain = None,
                   rect: RectBoundary = None) -> StepOperator:
    """Assemble the reusable step operator for a stationary velocity field."""
    if scheme.dim != grid.dim:
        raise ValueError(
            f"{scheme.family} needs a {scheme.dim}D grid, got {grid.dim}D")
    if domain is not None and grid.dim != 2:
        raise ValueError("implicit domains need a 2D grid")
    if domain is not None and domain.phi.shape != grid.shape:
        raise ValueError("phi shape does not match the grid")
    A, B, C, D = _bulk_coefficients(grid, velocity, tau, scheme)
    ny, nx = grid.shape
    rec = _Recorder()
    stats = {"max_cut_courant": 0.0, "min_inside_gap": np.inf,
             "min_gamma": np.inf, "n_near_boundary": 0}
    if domain is None:
        rect = rect or RectBoundary()
        floor = _normal_floor(velocity)
        mask = np.ones((ny, nx), dtype=bool)
        outside = np.zeros((ny, nx), dtype=bool)
        ring_i = (np.arange(nx) < 2) | (np.arange(nx) > nx - 3)
        special = np.zeros((ny, nx), dtype=bool)
        special[:, ring_i] = True
        if grid.dim == 2:
            ring_j = (np.arange(ny) < 2) | (np.arange(ny) > ny - 3)
            special[ring_j, :] = True
        for j, i in np.argwhere(special):
            if _rect_pinned(grid, velocity, i, j, floor):
                if rect.value_fn is None:
                    raise AssemblyError(
                        f"inflow edge node (i={i}, j={j}) needs boundary "
                        "values but none were given")
                mask[j, i] = False
                x, y = _node_xy(grid, i, j)
                rec.pin_node(j, i, x, y)
                A[j, i, :] = 0.0
                A[j, i, 0] = 1.0
                B[j, i, :] = 0.0
                continue
            if grid.dim == 2 and not rect.exact_ghosts:
                row = _per_axis_row(grid, velocity, tau, i, j, scheme)
            else:
                row = interior_row(i, j, velocity, tau, grid.h, scheme)
            _close_rect_row(row, grid, velocity, rect, rec, i, j, floor)
            _write_row(A, B, i, j, row)
        value_fn = rect.value_fn
    else:
        if rect is not None:
            raise ValueError("give either an implicit domain or edge policies")
        phi = domain.phi
        outside = phi > 0
        mask = phi < 0
        clean = _interior_full_clean(phi)
        for j, i in np.argwhere((phi == 0)):
            x, y = _node_xy(grid, i, j)
            rec.pin_node(j, i, x, y)
        for j, i in np.argwhere(mask & ~clean):
            row = interior_row(i, j, velocity, tau, grid.h, scheme)
            if classify_node(i, j, phi, row_footprint(row)) == NodeClass.INTERIOR_FULL:
                continue
            stats["n_near_boundary"] += 1
            row = _near_boundary_row(grid, velocity, tau, phi, rec, i, j, stats,
                                     scheme, phi_fn=domain.phi_fn)
            if row is None:
                mask[j, i] = False
            else:
                _write_row(A, B, i, j, row)
        unsolved = ~mask
        A[unsolved] = 0.0
        A[unsolved, 0] = 1.0
        B[unsolved] = 0.0
        value_fn = domain.dirichlet
    if (rec.pin or rec.rec) and value_fn is None:
        raise AssemblyError("boundary values required but no function given")
    validate_coefficients(A, mask, STENCIL_OFFSETS, "implicit")
    validate_coefficients(B, mask, STENCIL_OFFSETS, "explicit")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise AssemblyError("non-finite coefficient")
    if np.any(A[:, :, 0][mask] == 0.0):
        j, i = np.argwhere(mask & (A[:, :, 0] == 0.0))[0]
        raise AssemblyError(f"zero diagonal at node (i={i}, j={j})")
    stats["n_solved"] = int(mask.sum())
    stats["n_pinned"] = len(rec.pin)
    cmax = np.abs(C)[mask].max(initial=0.0)
    if grid.dim == 2:
        cmax = max(cmax, np.abs(D)[mask].max(initial=0.0))
    stats["max_courant"] = float(cmax)
    if not np.isfinite(stats["min_inside_gap"]):
        stats["min_inside_gap"] = None
        stats["min_gamma"] = None
    pin = np.array(rec.pin, dtype=np.float64).reshape(-1, 4)
    rows = np.array(rec.rec, dtype=np.float64).reshape(-1, 6)
    return StepOperator(
        grid=grid, scheme=scheme, tau=tau, A=A, B=B, mask=mask,
        outside=outside,
        pin_idx=pin[:, :2].astype(np.int64), pin_x=pin[:, 2], pin_y=pin[:, 3],
        rec_idx=rows[:, :2].astype(np.int64), rec_factor=rows[:, 2],
        rec_x=rows[:, 3], rec_y=rows[:, 4], rec_new=rows[:, 5] > 0.5,
        value_fn=value_fn, stats=stats)


def assemble_step_2d(field, velocity: VelocityField, tau: float,
                     scheme: SchemeSpec, domain: ImplicitDomain = None,
                     rect: RectBoundary = None, t_old: float = 0.0) -> LinearStep:
    """One-shot assembly of a single time step (see build_operator to reuse)."""
    op = build_operator(field.grid, velocity, tau, scheme, domain, rect)
    return op.make_step(field.values, t_old)
