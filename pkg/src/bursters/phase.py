"""Phase-plane analysis of planar fast subsystems.

Nullclines come from marching squares on a grid with edge-wise bisection
refinement, equilibria from damped Newton seeded at nullcline
near-intersections, and limit cycles from a Poincaré section through the
trailing mean of the first coordinate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage.measure import find_contours

from .dynsys import DynamicalSystem, _dp_step, _rk4, python_twin, write_atomic
from .models import FastSubsystem

__all__ = [
    "Window2D",
    "NullclineSet",
    "Equilibrium",
    "EquilibriumList",
    "LimitCycle",
    "CycleSearchConfig",
    "BasinTag",
    "default_window",
    "compute_nullclines",
    "find_equilibria",
    "newton_equilibrium",
    "jacobian",
    "richardson_jacobian",
    "classify",
    "find_limit_cycle",
    "find_cycles",
    "cycle_summary",
    "basin_probe",
    "sign_scan_oracle",
    "write_nullclines_csv",
    "write_equilibria_csv",
    "write_cycles_csv",
    "STABLE_NODE",
    "UNSTABLE_NODE",
    "SADDLE",
    "STABLE_FOCUS",
    "UNSTABLE_FOCUS",
    "NONHYPERBOLIC",
]

STABLE_NODE = "stable node"
UNSTABLE_NODE = "unstable node"
SADDLE = "saddle"
STABLE_FOCUS = "stable focus"
UNSTABLE_FOCUS = "unstable focus"
NONHYPERBOLIC = "nonhyperbolic"
STABLE_CLASSES = (STABLE_NODE, STABLE_FOCUS)


@dataclass(frozen=True)
class Window2D:
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    grid: tuple[int, int] = (400, 400)

    def __post_init__(self):
        (x0, x1), (y0, y1) = self.x_range, self.y_range
        if not (x1 > x0 and y1 > y0):
            raise ValueError("window intervals must be non-degenerate")
        if min(self.grid) < 2:
            raise ValueError("grid needs at least 2 points per axis")
        object.__setattr__(self, "x_range", (float(x0), float(x1)))
        object.__setattr__(self, "y_range", (float(y0), float(y1)))
        object.__setattr__(self, "grid", (int(self.grid[0]), int(self.grid[1])))

    @property
    def span(self) -> np.ndarray:
        return np.array([self.x_range[1] - self.x_range[0], self.y_range[1] - self.y_range[0]])

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.x_range[0], self.y_range[0]])

    @property
    def diagonal(self) -> float:
        return float(np.hypot(*self.span))

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.linspace(*self.x_range, self.grid[0]), np.linspace(*self.y_range, self.grid[1]))

    def contains(self, pt, margin: float = 0.0) -> bool:
        rel = (np.asarray(pt) - self.lower) / self.span
        return bool(np.all(rel >= -margin) and np.all(rel <= 1 + margin))

    def with_grid(self, nx: int, ny: int | None = None) -> "Window2D":
        return Window2D(self.x_range, self.y_range, (nx, ny if ny is not None else nx))


def default_window(fast: FastSubsystem, grid: tuple[int, int] = (400, 400)) -> Window2D:
    return Window2D(fast.x_range, fast.y_range, grid)


# --------------------------------------------------------------------------
# nullclines

@dataclass
class NullclineSet:
    curves_f1: list[np.ndarray]
    curves_f2: list[np.ndarray]
    scale: np.ndarray
    window: Window2D
    skipped_cells: int = 0
    max_residual: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def curves(self, which: int) -> list[np.ndarray]:
        return self.curves_f1 if which == 0 else self.curves_f2

    def rows(self):
        for tag, curves in (("f1", self.curves_f1), ("f2", self.curves_f2)):
            for i, c in enumerate(curves):
                for x, y in c:
                    yield f"{tag}-{i}", x, y


def _grid_values(fast: DynamicalSystem, w: Window2D) -> np.ndarray:
    xs, ys = w.axes()
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    with np.errstate(all="ignore"):
        F = fast.evaluate_many(pts)
    return F.reshape(len(ys), len(xs), 2)


def _bisect_edges(fast, comp, a, b, fa, tol, iters=80):
    """Vectorised bisection of component ``comp`` along segments a-b."""
    a, b = a.copy(), b.copy()
    fa = fa.copy()
    mid = 0.5 * (a + b)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        fm = fast.evaluate_many(mid)[:, comp]
        done = np.abs(fm) < tol
        if done.all():
            break
        same = np.sign(fm) == np.sign(fa)
        a = np.where(same[:, None] & ~done[:, None], mid, a)
        fa = np.where(same & ~done, fm, fa)
        b = np.where(~same[:, None] & ~done[:, None], mid, b)
        a = np.where(done[:, None], mid, a)
        b = np.where(done[:, None], mid, b)
    return mid


def compute_nullclines(fast: DynamicalSystem, w: Window2D | None = None) -> NullclineSet:
    """Zero-level curves of both vector-field components.

    Each polyline vertex returned by marching squares lies on a grid edge; it
    is refined along that edge by bisection until ``|f| < 1e-10 * scale``
    where ``scale`` is the maximum of ``|f|`` over the grid. Cells touching
    non-finite values are skipped and counted.
    """
    if w is None:
        w = default_window(fast)
    F = _grid_values(fast, w)
    finite = np.all(np.isfinite(F), axis=2)
    skipped = int((~finite).sum())
    xs, ys = w.axes()
    scale = np.array([np.nanmax(np.abs(np.where(finite, F[..., k], np.nan))) if finite.any() else 1.0
                      for k in range(2)])
    scale = np.where(scale > 0, scale, 1.0)
    out, worst = [], np.zeros(2)
    for k in range(2):
        Fk = np.where(finite, F[..., k], 0.0)
        contours = find_contours(Fk, 0.0, mask=finite if skipped else None)
        curves = []
        for c in contours:
            if len(c) < 2:
                continue
            r, q = c[:, 0], c[:, 1]
            ri, qi = np.floor(r).astype(int), np.floor(q).astype(int)
            on_row = np.isclose(r, np.round(r), atol=1e-9)
            ri = np.where(on_row, np.round(r).astype(int), ri)
            qi = np.where(~on_row & np.isclose(q, np.round(q), atol=1e-9), np.round(q).astype(int), qi)
            ri = np.clip(ri, 0, len(ys) - 1)
            qi = np.clip(qi, 0, len(xs) - 1)
            r2 = np.where(on_row, ri, np.minimum(ri + 1, len(ys) - 1))
            q2 = np.where(on_row, np.minimum(qi + 1, len(xs) - 1), qi)
            a = np.column_stack([xs[qi], ys[ri]])
            b = np.column_stack([xs[q2], ys[r2]])
            fa, fb = Fk[ri, qi], Fk[r2, q2]
            # vertices exactly on grid nodes, or degenerate edges, need no refinement
            refine = (np.sign(fa) != np.sign(fb)) & (fa != 0) & (fb != 0)
            pts = np.column_stack([np.interp(q, np.arange(len(xs)), xs), np.interp(r, np.arange(len(ys)), ys)])
            if refine.any():
                pts[refine] = _bisect_edges(fast, k, a[refine], b[refine], fa[refine], 1e-10 * scale[k])
            res = np.abs(fast.evaluate_many(pts)[:, k])
            worst[k] = max(worst[k], float(res.max()) if len(res) else 0.0)
            curves.append(pts)
        out.append(curves)
    return NullclineSet(out[0], out[1], scale, w, skipped, worst)


# --------------------------------------------------------------------------
# equilibria

def classify(eigenvalues, jac_norm: float | None = None) -> str:
    """Planar fixed-point type from the two Jacobian eigenvalues.

    An eigenvalue with ``|Re| < 1e-6 * ||J||`` makes the point
    nonhyperbolic. ``jac_norm`` defaults to the largest eigenvalue modulus.
    """
    l1, l2 = (complex(v) for v in eigenvalues)
    norm = jac_norm if jac_norm is not None else max(abs(l1), abs(l2))
    if norm == 0 or min(abs(l1.real), abs(l2.real)) < 1e-6 * norm:
        return NONHYPERBOLIC
    if l1.imag != 0.0 or l2.imag != 0.0:
        return STABLE_FOCUS if l1.real < 0 else UNSTABLE_FOCUS
    if l1.real * l2.real < 0:
        return SADDLE
    return STABLE_NODE if l1.real < 0 else UNSTABLE_NODE


def jacobian(fast: DynamicalSystem, x, steps) -> np.ndarray:
    """Central finite-difference Jacobian with per-coordinate steps."""
    x = np.asarray(x, dtype=float)
    pts = []
    for j in range(2):
        e = np.zeros(2)
        e[j] = steps[j]
        pts += [x + e, x - e]
    F = fast.evaluate_many(np.array(pts))
    return np.column_stack([(F[2 * j] - F[2 * j + 1]) / (2 * steps[j]) for j in range(2)])


def richardson_jacobian(fast: DynamicalSystem, x, steps) -> np.ndarray:
    """Richardson extrapolation of central differences at ``h`` and ``2h``."""
    steps = np.asarray(steps, dtype=float)
    return (4 * jacobian(fast, x, steps) - jacobian(fast, x, 2 * steps)) / 3


@dataclass(frozen=True)
class Equilibrium:
    location: np.ndarray
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    klass: str
    eigenvectors: np.ndarray | None = None
    residual: float = 0.0

    @property
    def is_stable(self) -> bool:
        return self.klass in STABLE_CLASSES

    @property
    def trace(self) -> float:
        return float(np.trace(self.jacobian))

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.jacobian))

    @property
    def max_real(self) -> float:
        return float(np.max(self.eigenvalues.real))


class EquilibriumList(list):
    """A list of equilibria with a ``diagnostics`` dict attached."""

    def __init__(self, items=(), diagnostics=None):
        super().__init__(items)
        self.diagnostics = diagnostics or {}


def _equilibrium_at(fast, x, span, residual=0.0) -> Equilibrium:
    J = jacobian(fast, x, 1e-6 * span)
    ev, evec = np.linalg.eig(J)
    order = np.lexsort((ev.imag, ev.real))
    ev, evec = ev[order], evec[:, order]
    return Equilibrium(np.array(x, dtype=float), J, ev, classify(ev, np.linalg.norm(J, 2)), evec, residual)


def newton_equilibrium(fast: DynamicalSystem, x0, span, scale, tol: float = 1e-10,
                       max_iter: int = 60) -> tuple[np.ndarray | None, float]:
    """Damped Newton on the normalised residual ``f / scale``.

    Steps are capped at 10% of the window span per coordinate and halved
    until the residual norm decreases. Returns ``(x, residual)`` or
    ``(None, residual)`` on failure.
    """
    span = np.asarray(span, dtype=float)
    scale = np.asarray(scale, dtype=float)
    x = np.array(x0, dtype=float)
    f = fast(0.0, x) / scale
    r = float(np.max(np.abs(f)))
    for _ in range(max_iter):
        if not np.isfinite(r):
            return None, r
        if r < tol:
            return x, r
        J = jacobian(fast, x, 1e-6 * span) / scale[:, None]
        try:
            dx = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(J, -f, rcond=None)[0]
        if not np.all(np.isfinite(dx)):
            return None, r
        cap = np.max(np.abs(dx) / (0.1 * span))
        if cap > 1:
            dx = dx / cap
        lam = 1.0
        while lam > 1e-6:
            xn = x + lam * dx
            fn = fast(0.0, xn) / scale
            rn = float(np.max(np.abs(fn)))
            if np.isfinite(rn) and (rn < r or rn < tol):
                break
            lam *= 0.5
        else:
            return None, r
        x, f, r = xn, fn, rn
    return (x, r) if r < tol else (None, r)


def _segment_intersections(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Proper intersections between the segments of two polylines."""
    if len(A) < 2 or len(B) < 2:
        return np.empty((0, 2))
    p, r = A[:-1], A[1:] - A[:-1]
    q, s = B[:-1], B[1:] - B[:-1]
    # prune with bounding boxes before the O(n m) test
    amin, amax = np.minimum(A[:-1], A[1:]), np.maximum(A[:-1], A[1:])
    bmin, bmax = np.minimum(B[:-1], B[1:]), np.maximum(B[:-1], B[1:])
    out = []
    tree = cKDTree(0.5 * (B[:-1] + B[1:]))
    reach = np.max(np.hypot(*r.T)) + np.max(np.hypot(*s.T)) if len(r) and len(s) else 0.0
    cand = tree.query_ball_point(0.5 * (A[:-1] + A[1:]), reach)
    for i, js in enumerate(cand):
        for j in js:
            if np.any(amax[i] < bmin[j]) or np.any(bmax[j] < amin[i]):
                continue
            den = r[i, 0] * s[j, 1] - r[i, 1] * s[j, 0]
            if den == 0:
                continue
            d = q[j] - p[i]
            t = (d[0] * s[j, 1] - d[1] * s[j, 0]) / den
            u = (d[0] * r[i, 1] - d[1] * r[i, 0]) / den
            if -1e-9 <= t <= 1 + 1e-9 and -1e-9 <= u <= 1 + 1e-9:
                out.append(p[i] + t * r[i])
    return np.array(out).reshape(-1, 2)


def _seeds(nc: NullclineSet) -> np.ndarray:
    """Intersections and near-approaches between f1 and f2 nullclines."""
    w = nc.window
    cell = w.span / (np.array(w.grid) - 1)
    seeds = []
    for A in nc.curves_f1:
        for B in nc.curves_f2:
            seeds.append(_segment_intersections(A, B))
    # near-tangencies where marching squares lost the crossing
    f1 = np.concatenate(nc.curves_f1) if nc.curves_f1 else np.empty((0, 2))
    f2 = np.concatenate(nc.curves_f2) if nc.curves_f2 else np.empty((0, 2))
    if len(f1) and len(f2):
        t1 = cKDTree(f1 / cell)
        t2 = cKDTree(f2 / cell)
        for i, js in enumerate(t1.query_ball_tree(t2, r=1.5)):
            for j in js:
                seeds.append(0.5 * (f1[i] + f2[j])[None, :])
    if not seeds:
        return np.empty((0, 2))
    pts = np.concatenate(seeds)
    # one seed per grid cell keeps the Newton count bounded
    key = np.floor((pts - w.lower) / cell).astype(np.int64)
    _, first = np.unique(key, axis=0, return_index=True)
    return pts[np.sort(first)]


def find_equilibria(fast: DynamicalSystem, w: Window2D | None = None,
                    nullclines: NullclineSet | None = None,
                    extra_seeds: Sequence | None = None) -> EquilibriumList:
    """All equilibria in the window, sorted by the first coordinate.

    Seeds that fail to converge are dropped and counted in
    ``result.diagnostics``.
    """
    if w is None:
        w = nullclines.window if nullclines is not None else default_window(fast)
    nc = nullclines if nullclines is not None else compute_nullclines(fast, w)
    seeds = _seeds(nc)
    if extra_seeds is not None and len(extra_seeds):
        seeds = np.concatenate([np.asarray(extra_seeds, dtype=float).reshape(-1, 2), seeds])
    return _polish(fast, w, nc.scale, seeds)


def _polish(fast, w: Window2D, scale, seeds) -> EquilibriumList:
    span = w.span
    found: list[tuple[np.ndarray, float]] = []
    failed = outside = 0
    for s in seeds:
        x, r = newton_equilibrium(fast, s, span, scale)
        if x is None:
            failed += 1
            continue
        if not w.contains(x, margin=1e-9):
            outside += 1
            continue
        if any(np.all(np.abs(x - y) < 1e-6 * span) for y, _ in found):
            continue
        found.append((x, r))
    found.sort(key=lambda item: (item[0][0], item[0][1]))
    eqs = [_equilibrium_at(fast, x, span, r) for x, r in found]
    return EquilibriumList(eqs, {"seeds": len(seeds), "newton_failed": failed,
                                 "outside_window": outside, "scale": np.asarray(scale).tolist()})


def _bilinear_root(c1, c2, eps: float = 1e-9) -> bool:
    """Whether the bilinear interpolants of two corner sets share a zero in the cell.

    ``c1``, ``c2`` hold corner values ordered (00, 10, 01, 11) in (u, v).
    """
    def coeffs(c):
        a00, a10, a01, a11 = c
        return a00, a10 - a00, a01 - a00, a11 - a10 - a01 + a00

    A1, B1, C1, D1 = coeffs(c1)
    A2, B2, C2, D2 = coeffs(c2)
    for swap in (False, True):
        if swap:
            B1, C1, B2, C2 = C1, B1, C2, B2
        # eliminate v: (A2 + B2 u)(C1 + D1 u) - (C2 + D2 u)(A1 + B1 u) = 0
        qa = B2 * D1 - D2 * B1
        qb = A2 * D1 + B2 * C1 - C2 * B1 - D2 * A1
        qc = A2 * C1 - C2 * A1
        roots = np.roots([qa, qb, qc]) if (qa or qb) else np.array([])
        for u in roots:
            if abs(u.imag) > 1e-12 or not -eps <= u.real <= 1 + eps:
                continue
            u = u.real
            den = C1 + D1 * u
            if abs(den) < 1e-14 * (abs(C1) + abs(D1) + 1e-300):
                continue
            v = -(A1 + B1 * u) / den
            if -eps <= v <= 1 + eps:
                return True
    return False


def sign_scan_oracle(fast: DynamicalSystem, w: Window2D, n: int = 50) -> list[np.ndarray]:
    """Brute-force equilibrium census on an ``n`` x ``n`` grid.

    A cell is flagged when both components change sign across its four
    corners and their bilinear interpolants share a zero inside the cell;
    8-connected groups of flagged cells count as one equilibrium. Returns
    the centroid of each group.
    """
    g = Window2D(w.x_range, w.y_range, (n + 1, n + 1))
    F = _grid_values(fast, g)
    flags = np.ones((n, n), dtype=bool)
    for k in range(2):
        S = np.sign(F[..., k])
        corners = np.stack([S[:-1, :-1], S[:-1, 1:], S[1:, :-1], S[1:, 1:]])
        flags &= (corners.max(axis=0) >= 0) & (corners.min(axis=0) <= 0)
    for r, c in zip(*np.nonzero(flags)):
        c1 = [F[r, c, 0], F[r, c + 1, 0], F[r + 1, c, 0], F[r + 1, c + 1, 0]]
        c2 = [F[r, c, 1], F[r, c + 1, 1], F[r + 1, c, 1], F[r + 1, c + 1, 1]]
        flags[r, c] = _bilinear_root(c1, c2)
    labels, count = ndimage.label(flags, structure=np.ones((3, 3)))
    xs, ys = g.axes()
    cx, cy = 0.5 * (xs[:-1] + xs[1:]), 0.5 * (ys[:-1] + ys[1:])
    out = []
    for idx in range(1, count + 1):
        r, c = np.nonzero(labels == idx)
        out.append(np.array([cx[c].mean(), cy[r].mean()]))
    return sorted(out, key=lambda p: tuple(p))


# --------------------------------------------------------------------------
# limit cycles

_S_OK, _S_EQ, _S_DIV, _S_UNDER, _S_STEPS, _S_NOCROSS, _S_CAPTURED = 0, 1, 2, 3, 4, 5, 6
_STATUS = {0: "ok", 1: "equilibrium", 2: "divergent", 3: "step underflow", 4: "step budget",
           5: "no crossing", 6: "captured"}


@njit
def _refine_crossing(rhs, p, sign, t, x, h, anchor, theta):
    """Crossing of x[0] = anchor inside [t, t+h], by secant on RK4 sub-steps."""
    lo, hi = 0.0, 1.0
    th = theta
    y = x
    for _ in range(30):
        y = _rk4(rhs, p, sign, t, x, th * h)
        g = y[0] - anchor
        if g < 0.0:
            lo = th
        else:
            hi = th
        if abs(g) < 1e-13 * (1.0 + abs(anchor)) or hi - lo < 1e-15:
            break
        # secant on the latest value, safeguarded by the bracket
        d = sign * rhs(t + th * h, y, p)[0] * h
        nt = th - g / d if d != 0.0 else 0.5 * (lo + hi)
        if not lo < nt < hi:
            nt = 0.5 * (lo + hi)
        th = nt
    return t + th * h, y


@njit
def _section_run(rhs, p, sign, t, x, h, anchor, adapt, max_cross, gap_limit, conv_tol,
                 rtol, atol, hmax, hmin, max_steps, box_lo, box_hi, vel_scale, vel_tol,
                 targets, radius, out_pts, out_t, out_lo, out_hi):
    """Integrate and record upward crossings of x[0] through ``anchor``.

    With ``adapt`` the anchor is reset after every crossing to the time
    average of x[0] since the previous one. With ``conv_tol[0] > 0`` the run
    stops once two successive crossing points agree within ``conv_tol``.
    Returns (status, n_cross, t, x, h, steps, anchor, mean_since_last, index).
    """
    k1 = sign * rhs(t, x, p)
    n = 0
    steps = 0
    t_last = t
    integral = 0.0
    xmin = x[0]
    xmax = x[0]
    while True:
        if steps >= max_steps:
            return _S_STEPS, n, t, x, h, steps, anchor, integral / max(t - t_last, 1e-300), -1
        for k in range(targets.shape[0]):
            inside = True
            for j in range(2):
                if abs(x[j] - targets[k, j]) > radius[j]:
                    inside = False
            if inside:
                return _S_CAPTURED, n, t, x, h, steps, anchor, 0.0, k
        v = 0.0
        for j in range(2):
            r = abs(k1[j]) / vel_scale[j]
            if r > v:
                v = r
        if v < vel_tol:
            return _S_EQ, n, t, x, h, steps, anchor, 0.0, -1
        if t - t_last > gap_limit:
            return _S_NOCROSS, n, t, x, h, steps, anchor, integral / (t - t_last), -1
        h = min(h, hmax)
        xn, err, k7 = _dp_step(rhs, p, sign, t, x, h, k1)
        finite = True
        en = 0.0
        for j in range(x.shape[0]):
            if not np.isfinite(xn[j]):
                finite = False
                break
            sc = atol + rtol * max(abs(x[j]), abs(xn[j]))
            r = abs(err[j]) / sc
            if r > en:
                en = r
        if not finite or en > 1.0:
            h = h * (0.25 if not finite else max(0.1, 0.9 * en ** -0.2))
            if h < hmin:
                if not finite:
                    return _S_DIV, n, t, x, h, steps, anchor, 0.0, -1
                return _S_UNDER, n, t, x, h, steps, anchor, 0.0, -1
            continue
        steps += 1
        crossed = x[0] < anchor <= xn[0]
        if crossed:
            theta = (anchor - x[0]) / (xn[0] - x[0])
            tc, xc = _refine_crossing(rhs, p, sign, t, x, h, anchor, theta)
            integral += 0.5 * (x[0] + xc[0]) * (tc - t)
            out_pts[n] = xc
            out_t[n] = tc
            out_lo[n] = min(xmin, xc[0])
            out_hi[n] = max(xmax, xc[0])
            mean = integral / max(tc - t_last, 1e-300)
            t_last = tc
            integral = 0.5 * (xc[0] + xn[0]) * (t + h - tc)
            xmin = min(xc[0], xn[0])
            xmax = max(xc[0], xn[0])
            n += 1
            converged = False
            if conv_tol[0] > 0.0 and n >= 3:
                # successive return steps in units of the tolerance; the
                # geometric tail d2 r / (1 - r) bounds the remaining distance
                d1 = 0.0
                d2 = 0.0
                for j in range(2):
                    d1 = max(d1, abs(out_pts[n - 2, j] - out_pts[n - 3, j]) / conv_tol[j])
                    d2 = max(d2, abs(out_pts[n - 1, j] - out_pts[n - 2, j]) / conv_tol[j])
                if d2 < 1e-2:
                    converged = True
                elif d2 < 1.0 and d2 < d1:
                    r = d2 / d1
                    converged = d2 * r / (1.0 - r) < 1.0
            if adapt:
                anchor = mean
            t = t + h
            x = xn
            k1 = k7
            if converged or n >= max_cross or n >= out_pts.shape[0]:
                return _S_OK, n, t, x, h, steps, anchor, mean, -1
        else:
            integral += 0.5 * (x[0] + xn[0]) * h
            if xn[0] < xmin:
                xmin = xn[0]
            if xn[0] > xmax:
                xmax = xn[0]
            t = t + h
            x = xn
            k1 = k7
        for j in range(2):
            if x[j] < box_lo[j] or x[j] > box_hi[j]:
                return _S_DIV, n, t, x, h, steps, anchor, 0.0, -1
        fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
        h = h * fac


@dataclass(frozen=True)
class CycleSearchConfig:
    """Budgets and tolerances of the Poincaré-section cycle search."""

    transient_periods: int = 20
    max_steps: int = 1_000_000
    return_tol: float = 1e-6
    rel_tol: float = 1e-9
    abs_tol: float = 1e-10
    min_amplitude: float = 1e-4
    equilibrium_velocity: float = 1e-9
    gap_time: float = 400.0
    box_margin: float = 1.0
    max_returns: int = 100_000


@dataclass(frozen=True)
class LimitCycle:
    samples: np.ndarray
    times: np.ndarray
    period: float
    v_min: float
    v_max: float
    stability: str
    anchor: float
    section_point: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def amplitude(self) -> float:
        return self.v_max - self.v_min


class _Runner:
    """Thin stateful wrapper around :func:`_section_run`."""

    def __init__(self, system: DynamicalSystem, w: Window2D, cfg: CycleSearchConfig,
                 targets=None, radius=None):
        self.rhs, self.p, python = system._kernel_args()
        self.run = python_twin(_section_run) if python else _section_run
        self.sign = system.sign
        self.span = w.span
        self.ts = system.time_scale
        self.cfg = cfg
        m = cfg.box_margin * self.span
        self.lo = w.lower - m
        self.hi = w.lower + self.span + m
        self.vel_scale = self.span / self.ts
        self.atol = cfg.abs_tol * float(self.span.min())
        self.hmax = self.ts
        self.hmin = 1e-14 * self.ts
        self.targets = np.zeros((0, 2)) if targets is None else np.asarray(targets, float).reshape(-1, 2)
        self.radius = np.zeros(2) if radius is None else np.asarray(radius, float)
        self.steps = 0
        self.h = 0.01 * self.ts

    def __call__(self, t, x, anchor, adapt, max_cross, conv_tol, gap_limit):
        cap = int(min(max_cross, self.cfg.max_returns)) + 1
        pts = np.empty((cap, 2))
        ts, lo, hi = np.empty(cap), np.empty(cap), np.empty(cap)
        res = self.run(self.rhs, self.p, self.sign, t, np.array(x, float), self.h, anchor, adapt,
                       max_cross, gap_limit, np.asarray(conv_tol, float), self.cfg.rel_tol, self.atol,
                       self.hmax, self.hmin, max(self.cfg.max_steps - self.steps, 1), self.lo, self.hi,
                       self.vel_scale, self.cfg.equilibrium_velocity, self.targets, self.radius,
                       pts, ts, lo, hi)
        status, n, t, x, h, steps, anchor, mean, idx = res
        self.steps += steps
        self.h = h
        return status, pts[:n], ts[:n], lo[:n], hi[:n], t, x, anchor, mean, idx


def _search(system: DynamicalSystem, seed, w: Window2D, cfg: CycleSearchConfig,
            targets=None, radius=None, anchor=None):
    """Core of the cycle search on ``system`` (already time-oriented).

    Returns (result_kind, payload, diagnostics); result_kind is ``cycle``,
    ``captured`` or a failure status name.
    """
    run = _Runner(system, w, cfg, targets, radius)
    x = np.array(seed, dtype=float)
    t = 0.0
    gap = cfg.gap_time * run.ts
    diag = {"seed": x.tolist()}
    # transient: adaptive anchor until enough crossings have been seen
    anchor = float(x[0]) if anchor is None else anchor
    seen = 0
    last_mean = anchor
    while seen < cfg.transient_periods:
        status, pts, ts, lo, hi, t, x, anchor, mean, idx = run(
            t, x, anchor, True, cfg.transient_periods - seen, np.zeros(2), gap)
        seen += len(pts)
        if status == _S_NOCROSS:
            anchor = mean
            continue
        if status != _S_OK:
            diag.update(status=_STATUS[status], steps=run.steps, t=t, crossings=seen, state=x.tolist())
            return _STATUS[status], idx, diag
        last_mean = anchor
    if seen:
        anchor = last_mean
    # fixed section: wait for the return map to settle
    tol = cfg.return_tol * w.span
    settled_pts = settled_t = None
    while True:
        status, pts, ts, lo, hi, t, x, _, mean, idx = run(t, x, anchor, False, cfg.max_returns, tol, gap)
        if status == _S_NOCROSS:
            anchor = mean
            continue
        if status != _S_OK:
            diag.update(status=_STATUS[status], steps=run.steps, t=t, crossings=seen, state=x.tolist())
            return _STATUS[status], idx, diag
        seen += len(pts)
        if len(pts) >= 2:
            settled_pts, settled_t = pts[-1], ts[-1] - ts[-2]
            v_lo, v_hi = lo[-1], hi[-1]
            amp = v_hi - v_lo
            break
    diag.update(status="ok", steps=run.steps, t=t, crossings=seen, anchor=anchor)
    if amp < cfg.min_amplitude * w.span[0]:
        diag["status"] = "equilibrium"
        diag["amplitude"] = amp
        return "equilibrium", -1, diag
    return "cycle", (settled_pts, settled_t, anchor, float(v_lo), float(v_hi)), diag


def _cycle_samples(system: DynamicalSystem, x0, period, anchor, w: Window2D, cfg: CycleSearchConfig):
    """Sample one period from a section point with tight tolerances."""
    from .dynsys import IntegratorConfig, integrate_adaptive

    # refine the return time with one more section pass at tighter tolerance
    tight = CycleSearchConfig(transient_periods=0, max_steps=cfg.max_steps, return_tol=cfg.return_tol,
                              rel_tol=min(cfg.rel_tol, 1e-10), abs_tol=min(cfg.abs_tol, 1e-11),
                              gap_time=cfg.gap_time, box_margin=cfg.box_margin)
    run = _Runner(system, w, tight)
    # the start sits on the section, so a crossing at t ~ 0 may register first
    status, pts, ts, lo, hi, t, x, _, _, _ = run(0.0, x0, anchor, False, 2, np.zeros(2), cfg.gap_time * run.ts)
    later = ts[ts > 0.5 * period]
    if len(later):
        period = float(later[0])
    icfg = IntegratorConfig(method="rk45", t_end=period, rel_tol=1e-10, abs_tol=1e-11 * float(w.span.min()),
                            max_step=period / 2000)
    traj = integrate_adaptive(system, x0, icfg)
    return traj.times, traj.states, period


def find_limit_cycle(fast: DynamicalSystem, seed, stability: str = "stable", w: Window2D | None = None,
                     cfg: CycleSearchConfig | None = None, diagnostics: dict | None = None
                     ) -> LimitCycle | None:
    """Locate a limit cycle by forward integration from ``seed``.

    Unstable cycles are searched on the time-reversed field, where they are
    attracting in the plane. Returns ``None`` when the orbit settles on an
    equilibrium, leaves the enlarged window or exhausts the step budget; the
    reason is written to ``diagnostics`` if a dict is supplied.
    """
    if stability not in ("stable", "unstable"):
        raise ValueError("stability must be 'stable' or 'unstable'")
    cfg = cfg or CycleSearchConfig()
    if w is None:
        w = default_window(fast)
    system = fast if stability == "stable" else fast.reversed()
    kind, payload, diag = _search(system, seed, w, cfg)
    if diagnostics is not None:
        diagnostics.clear()
        diagnostics.update(diag)
    if kind != "cycle":
        return None
    x0, period, anchor = payload[:3]
    times, states, period = _cycle_samples(system, x0, period, anchor, w, cfg)
    if stability == "unstable":
        # present the orbit in forward time
        times = period - times[::-1]
        states = states[::-1]
    v = states[:, 0]
    return LimitCycle(states, times, period, float(v.min()), float(v.max()), stability, anchor,
                      np.array(x0), diag)


def find_cycles(fast: DynamicalSystem, equilibria: Sequence[Equilibrium], w: Window2D | None = None,
                cfg: CycleSearchConfig | None = None) -> list[LimitCycle]:
    """Stable cycles around repelling equilibria and unstable cycles around stable foci.

    Unstable searches (on the reversed field) start next to each stable
    focus. Stable searches start a small offset from each unstable node or
    focus, just outside each unstable cycle found, and from a far corner of
    the window. Duplicates are merged by period.
    """
    if w is None:
        w = default_window(fast)
    found: list[LimitCycle] = []
    jobs = [(e.location + 1e-4 * w.span, "unstable") for e in equilibria if e.klass == STABLE_FOCUS]
    jobs += [(e.location + 1e-2 * w.span, "stable") for e in equilibria
             if e.klass in (UNSTABLE_FOCUS, UNSTABLE_NODE)]
    jobs.append((None, "stable"))
    jobs.append((w.lower + 0.9 * w.span, "stable"))
    for seed, stability in jobs:
        if seed is None:
            # just outside the outermost unstable cycle, if any
            outer = [c for c in found if c.stability == "unstable"]
            if not outer:
                continue
            c = max(outer, key=lambda c: c.v_max)
            seed = c.samples[int(np.argmax(c.samples[:, 0]))] + np.array([1e-3 * w.span[0], 0.0])
        c = find_limit_cycle(fast, seed, stability, w, cfg)
        if c is None:
            continue
        if any(o.stability == c.stability and abs(o.period - c.period) < 1e-3 * c.period
               and abs(o.v_max - c.v_max) < 1e-3 * w.span[0] for o in found):
            continue
        found.append(c)
    return found


def cycle_summary(fast: DynamicalSystem, seed, stability: str = "stable", w: Window2D | None = None,
                  cfg: CycleSearchConfig | None = None):
    """Section point, period and first-coordinate extrema of a cycle, or ``None``.

    Same search as :func:`find_limit_cycle` without sampling the orbit;
    the extrema are those of the last return and the period is the last
    return time.
    """
    cfg = cfg or CycleSearchConfig()
    if w is None:
        w = default_window(fast)
    system = fast if stability == "stable" else fast.reversed()
    kind, payload, _ = _search(system, seed, w, cfg)
    if kind != "cycle":
        return None
    x0, period, anchor, v_lo, v_hi = payload
    return np.array(x0), float(period), v_lo, v_hi, anchor


@dataclass(frozen=True)
class BasinTag:
    kind: str
    index: int | None = None

    def __str__(self):
        return self.kind if self.index is None else f"{self.kind} {self.index}"


def basin_probe(fast: DynamicalSystem, point, equilibria: Sequence[Equilibrium] = (),
                cycles: Sequence[LimitCycle] = (), w: Window2D | None = None,
                cfg: CycleSearchConfig | None = None) -> BasinTag:
    """Which known attractor captures the forward orbit of ``point``.

    Capture by an equilibrium means entering a box of half-width 1e-4 of the
    window span around it. Capture by a cycle means Poincaré convergence to a
    section point lying on that cycle.
    """
    cfg = cfg or CycleSearchConfig()
    if w is None:
        w = default_window(fast)
    targets = np.array([e.location for e in equilibria]).reshape(-1, 2)
    kind, payload, diag = _search(fast, point, w, cfg, targets=targets, radius=1e-4 * w.span)
    if kind == "captured":
        return BasinTag("equilibrium", int(payload))
    if kind == "equilibrium":
        # settled somewhere not listed; match by distance if possible
        final = np.array(diag.get("state", point))
        for i, e in enumerate(equilibria):
            if np.all(np.abs(final - e.location) < 1e-3 * w.span):
                return BasinTag("equilibrium", i)
        return BasinTag("equilibrium")
    if kind != "cycle":
        return BasinTag("divergent")
    x0 = payload[0]
    best, best_d = None, np.inf
    for i, c in enumerate(cycles):
        d = np.min(np.max(np.abs(c.samples - x0) / w.span, axis=1))
        if d < best_d:
            best, best_d = i, d
    if best is not None and best_d < 1e-3:
        return BasinTag("limit cycle", best)
    return BasinTag("limit cycle")


# --------------------------------------------------------------------------
# CSV export

def write_nullclines_csv(nc: NullclineSet, path) -> None:
    rows = list(nc.rows())
    lines = ["curve_id,x,y"] + [f"{cid},{x:.17g},{y:.17g}" for cid, x, y in rows]
    write_atomic(path, "\n".join(lines) + "\n")


def write_equilibria_csv(eqs: Sequence[Equilibrium], path) -> None:
    lines = ["x,y,class,re1,im1,re2,im2"]
    for e in eqs:
        (x, y), (l1, l2) = e.location, e.eigenvalues
        lines.append(",".join([format(x, ".17g"), format(y, ".17g"), e.klass,
                               *(format(v, ".17g") for v in (l1.real, l1.imag, l2.real, l2.imag))]))
    write_atomic(path, "\n".join(lines) + "\n")


def write_cycles_csv(cycles: Sequence[LimitCycle], path) -> None:
    lines = ["curve_id,x,y"]
    for i, c in enumerate(cycles):
        for x, y in c.samples:
            lines.append(f"{c.stability}-{i},{x:.17g},{y:.17g}")
    write_atomic(path, "\n".join(lines) + "\n")
