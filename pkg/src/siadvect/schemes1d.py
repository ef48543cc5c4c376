"""One dimensional advection rows for the kappa-scheme family.

A scheme step solves per node

    sum_k alpha_k U_{i+k}^{n+1}  =  sum_k beta_k U_{i+k}^n  +  extra,

and this module produces the (alpha, beta) stencils.  Two families:

* semi-implicit: the first order upwind part and the upwind-shifted half of
  the second order correction sit at the new time level, the remaining half
  stays explicit.  Only the node's own velocity value enters.
* fully implicit: everything at the new time level, with the second order
  correction 0.5*(h + tau*V)*kappa-gradient inside the upwind difference, so
  the upwind neighbour's velocity (and its own kappa) enters as well.

The kappa-gradient blends one sided differences,

    d_kappa U_i = [(1-kappa)(U_i - U_{i-1}) + (1+kappa)(U_{i+1} - U_i)] / (2h),

and kappa may depend on the local Courant number; the third order choices are
sign(C)(1 - |C|)/3 for the semi-implicit family and sign(C)(1 + 2|C|)/3 for
the fully implicit one.
"""

from dataclasses import dataclass, field

import numpy as np

KAPPA_KINDS = ("constant", "upwind_sign", "downwind_sign", "central",
               "third_order_implicit", "third_order_semi_implicit")


@dataclass(frozen=True)
class Kappa:
    """A rule giving kappa as a function of the nodal Courant number."""

    kind: str
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in KAPPA_KINDS:
            raise ValueError(f"unknown kappa kind {self.kind!r}")

    @classmethod
    def constant(cls, value: float, allow_outside: bool = False) -> "Kappa":
        if not allow_outside and not -1.0 <= value <= 1.0:
            raise ValueError(f"constant kappa {value} outside [-1, 1]")
        return cls("constant", float(value))

    @classmethod
    def upwind_sign(cls) -> "Kappa":
        return cls("upwind_sign")

    @classmethod
    def downwind_sign(cls) -> "Kappa":
        return cls("downwind_sign")

    @classmethod
    def central(cls) -> "Kappa":
        return cls("central")

    @classmethod
    def third_order_implicit(cls) -> "Kappa":
        return cls("third_order_implicit")

    @classmethod
    def third_order_semi_implicit(cls) -> "Kappa":
        return cls("third_order_semi_implicit")


def kappa_value(choice: Kappa, courant):
    """Evaluate the kappa rule at Courant number(s); sign(0) counts as 0."""
    c = np.asarray(courant, dtype=np.float64)
    s = np.sign(c)
    if choice.kind == "constant":
        out = np.full_like(c, choice.value)
    elif choice.kind == "upwind_sign":
        out = s
    elif choice.kind == "downwind_sign":
        out = -s
    elif choice.kind == "central":
        out = np.zeros_like(c)
    elif choice.kind == "third_order_implicit":
        out = s * (1.0 + 2.0 * np.abs(c)) / 3.0
    else:  # third_order_semi_implicit
        out = s * (1.0 - np.abs(c)) / 3.0
    if out.ndim == 0:
        return float(out)
    return out


def kappa_gradient(u_m1: float, u_0: float, u_p1: float, h: float, kappa: float) -> float:
    """Blended one sided difference at the middle node."""
    return ((1.0 - kappa) * (u_0 - u_m1) + (1.0 + kappa) * (u_p1 - u_0)) / (2.0 * h)


@dataclass
class StencilRow:
    """One assembled row: implicit/explicit offset -> coefficient maps.

    Offsets are (di, dj) pairs relative to the row's node; both maps include
    the unit diagonal/center contribution.  rhs_extra collects boundary data
    already evaluated to numbers.
    """

    index: tuple
    implicit: dict = field(default_factory=dict)
    explicit: dict = field(default_factory=dict)
    rhs_extra: float = 0.0

    def add_implicit(self, off, coeff):
        if coeff != 0.0:
            c = self.implicit.get(off, 0.0) + coeff
            if c == 0.0:
                self.implicit.pop(off, None)
            else:
                self.implicit[off] = c

    def add_explicit(self, off, coeff):
        if coeff != 0.0:
            c = self.explicit.get(off, 0.0) + coeff
            if c == 0.0:
                self.explicit.pop(off, None)
            else:
                self.explicit[off] = c


def semi_implicit_axis_coeffs(courant: float, kappa: float) -> tuple:
    """Per-axis contributions of the semi-implicit scheme, unit terms excluded.

    Returns (implicit, explicit) maps of axis offset -> coefficient.  The
    implicit part lives on {0, -s, -2s} for s = sign(C); the explicit part
    on {-1, 0, +1} with the signed Courant number.
    """
    c = abs(courant)
    if c == 0.0:
        return {}, {}
    s = 1.0 if courant > 0 else -1.0
    imp = {0: c - c * (1.0 + s * kappa) / 4.0,
           int(-s): -c + s * c * kappa / 2.0}
    up2 = c * (1.0 - s * kappa) / 4.0
    if up2 != 0.0:
        imp[int(-2 * s)] = up2
    exp = {}
    for off, v in ((-1, courant * (1.0 - kappa) / 4.0),
                   (0, courant * kappa / 2.0),
                   (1, -courant * (1.0 + kappa) / 4.0)):
        if v != 0.0:
            exp[off] = v
    return imp, exp


def _corrected_value_stencil(courant: float, kappa: float, s: float) -> dict:
    """Stencil of U_m + s*0.5*(h + s*tau*V_m)*kappa-gradient(U)_m, in units of h."""
    f = s * (1.0 + s * courant) / 4.0
    return {-1: -f * (1.0 - kappa),
            0: 1.0 - 2.0 * f * kappa,
            1: f * (1.0 + kappa)}


def fully_implicit_axis_coeffs(courant: float, kappa: float,
                               courant_up: float, kappa_up: float) -> tuple:
    """Per-axis contributions of the fully implicit scheme, unit terms excluded.

    courant_up / kappa_up belong to the upwind neighbour, whose corrected
    value enters through the outer upwind difference.
    """
    c = abs(courant)
    if c == 0.0:
        return {}, {}
    s = 1.0 if courant > 0 else -1.0
    here = _corrected_value_stencil(courant, kappa, s)
    there = _corrected_value_stencil(courant_up, kappa_up, s)
    imp = {}
    for off, v in here.items():
        imp[off] = imp.get(off, 0.0) + c * v
    shift = int(-s)
    for off, v in there.items():
        imp[off + shift] = imp.get(off + shift, 0.0) - c * v
    return {k: v for k, v in imp.items() if v != 0.0}, {}


def assemble_semi_implicit_row_1d(i: int, velocity: np.ndarray, tau: float,
                                  h: float, choice: Kappa) -> StencilRow:
    """Interior semi-implicit row at node i; no boundary closure applied."""
    v = np.asarray(velocity, dtype=np.float64).reshape(-1)
    c = tau * v[i] / h
    k = kappa_value(choice, c)
    row = StencilRow(index=(i, 0), implicit={(0, 0): 1.0}, explicit={(0, 0): 1.0})
    imp, exp = semi_implicit_axis_coeffs(c, k)
    for off, val in imp.items():
        row.add_implicit((off, 0), val)
    for off, val in exp.items():
        row.add_explicit((off, 0), val)
    return row


def assemble_implicit_row_1d(i: int, velocity: np.ndarray, tau: float,
                             h: float, choice: Kappa) -> StencilRow:
    """Interior fully implicit row at node i; the explicit side is the identity."""
    v = np.asarray(velocity, dtype=np.float64).reshape(-1)
    c = tau * v[i] / h
    row = StencilRow(index=(i, 0), implicit={(0, 0): 1.0}, explicit={(0, 0): 1.0})
    if c == 0.0:
        return row
    up = i - 1 if c > 0 else i + 1
    if up < 0 or up >= v.size:
        raise IndexError(f"upwind neighbour of node {i} out of range")
    c_up = tau * v[up] / h
    imp, _ = fully_implicit_axis_coeffs(c, kappa_value(choice, c),
                                        c_up, kappa_value(choice, c_up))
    for off, val in imp.items():
        row.add_implicit((off, 0), val)
    return row


class BoundaryMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class BoundarySpec1D:
    """Policy for one end of a 1D grid.

    kind "dirichlet": inflow end, node pinned to fn(x, t^{n+1}); out of
    domain references evaluate fn at the ghost coordinate.
    kind "frozen": V = 0 there, node keeps its initial value.
    kind "outflow": ghosts filled by linear extrapolation from the last two
    interior values; fn, when given, supplies the ghost values instead
    (verification runs with a known solution).
    """

    kind: str
    fn: object = None

    def __post_init__(self):
        if self.kind not in ("dirichlet", "frozen", "outflow"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "dirichlet" and self.fn is None:
            raise ValueError("dirichlet end needs a boundary value function")

    @classmethod
    def dirichlet(cls, fn) -> "BoundarySpec1D":
        return cls("dirichlet", fn)

    @classmethod
    def frozen(cls) -> "BoundarySpec1D":
        return cls("frozen")

    @classmethod
    def outflow(cls, fn=None) -> "BoundarySpec1D":
        return cls("outflow", fn)


def _validate_end(spec: BoundarySpec1D, v_end: float, name: str, inward: float):
    vn = v_end * inward  # > 0 means flow entering the domain
    if spec.kind == "dirichlet" and not vn > 0:
        raise BoundaryMismatchError(
            f"dirichlet at {name} end but velocity does not point inward")
    if spec.kind == "frozen" and v_end != 0.0:
        raise BoundaryMismatchError(f"frozen at {name} end but velocity is {v_end}")
    if spec.kind == "outflow" and not vn < 0:
        raise BoundaryMismatchError(
            f"outflow at {name} end but velocity does not point outward")


def fold_linear_targets(j: int, lo: int, hi: int) -> list:
    """Express the value at out of range node j through in-range nodes by
    repeated linear extrapolation past the nearer end; returns (node, weight)
    pairs.  Exact for fields linear along the axis."""
    stack = [(j, 1.0)]
    done = []
    while stack:
        jj, w = stack.pop()
        if lo <= jj <= hi:
            done.append((jj, w))
        elif jj < lo:
            stack.append((jj + 1, 2.0 * w))
            stack.append((jj + 2, -w))
        else:
            stack.append((jj - 1, 2.0 * w))
            stack.append((jj - 2, -w))
    merged = {}
    for jj, w in done:
        merged[jj] = merged.get(jj, 0.0) + w
    return [(jj, w) for jj, w in merged.items() if w != 0.0]


def apply_boundary_1d(rows: list, grid, velocity: np.ndarray,
                      left: BoundarySpec1D, right: BoundarySpec1D,
                      t_new: float, t_old: float = None) -> list:
    """Close every out of range reference in a full line of interior rows.

    rows[i] is the row at node i as assembled away from boundaries; the
    returned rows only reference nodes inside [0, M].  Dirichlet-pinned nodes
    come back as identity rows with an empty explicit part and rhs_extra set
    to the boundary value at t^{n+1}.
    """
    v = np.asarray(velocity, dtype=np.float64).reshape(-1)
    M = grid.M
    x0, h = grid.x_min, grid.h
    _validate_end(left, v[0], "left", inward=+1.0)
    _validate_end(right, v[M], "right", inward=-1.0)
    if t_old is None:
        t_old = t_new
    out = []
    for i, row in enumerate(rows):
        if (i == 0 and left.kind == "dirichlet") or (i == M and right.kind == "dirichlet"):
            end = left if i == 0 else right
            out.append(StencilRow(index=(i, 0), implicit={(0, 0): 1.0}, explicit={},
                                  rhs_extra=float(end.fn(x0 + i * h, t_new))))
            continue
        new = StencilRow(index=(i, 0), rhs_extra=row.rhs_extra)
        for (off, _dj), a in row.implicit.items():
            j = i + off
            if 0 <= j <= M:
                new.add_implicit((off, 0), a)
                continue
            end = left if j < 0 else right
            if end.fn is not None:
                new.rhs_extra -= a * float(end.fn(x0 + j * h, t_new))
            else:
                for jj, w in fold_linear_targets(j, 0, M):
                    new.add_implicit((jj - i, 0), a * w)
        for (off, _dj), b in row.explicit.items():
            j = i + off
            if 0 <= j <= M:
                new.add_explicit((off, 0), b)
                continue
            end = left if j < 0 else right
            if end.fn is not None:
                new.rhs_extra += b * float(end.fn(x0 + j * h, t_old))
            else:
                for jj, w in fold_linear_targets(j, 0, M):
                    new.add_explicit((jj - i, 0), b * w)
        out.append(new)
    return out
