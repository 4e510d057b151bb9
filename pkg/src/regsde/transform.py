"""Support decomposition, the primitive H = int_c^x dz / sigma and its inverse K.

On each connected component (a, b) of {sigma != 0} integrals are taken in a
chart u -> z(u) that sends the finite endpoints to u = -inf / +inf:

* both ends finite: logistic chart, z - a ~ e^u near a;
* only a finite: z = a + e^u;
* only b finite: z = b - e^-u;
* neither: z = c + sinh(u).

In that coordinate the integrand dz/du / sigma(z) stays smooth for the usual
power-type zeros, so composite Gauss-Legendre on fixed-width panels resolves
it. Cumulative panel sums are memoized per time value on each :class:`HKPair`.
"""
from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from . import _quad
from .errors import InversionError, MissingDerivativeError, QuadratureError, SupportError

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _arr(v):
    return np.asarray(v, dtype=float)


def _const(c: float) -> Evaluator:
    def f(t, x):
        return np.full(np.broadcast(_arr(t), _arr(x)).shape, float(c))
    return f


@dataclass
class Coefficient:
    """sigma (with derivatives), beta, alpha as vectorized (t, x) evaluators.

    ``closed_h(t, x, c)`` / ``closed_k(t, y, c)`` are optional analytic
    primitives normalized at the anchor ``c``.
    """

    sigma: Evaluator
    dx_sigma: Optional[Evaluator] = None
    dx2_sigma: Optional[Evaluator] = None
    dt_sigma: Optional[Evaluator] = None
    beta: Optional[Evaluator] = None
    dx_beta: Optional[Evaluator] = None
    alpha: Optional[Evaluator] = None
    autonomous: bool = False
    closed_h: Optional[Callable] = None
    closed_k: Optional[Callable] = None
    declared_smoothness: dict = field(default_factory=dict)
    name: str = ""

    def sig(self, t, x):
        return _arr(self.sigma(_arr(t), _arr(x)))

    def dt_sig(self, t, x):
        if self.dt_sigma is not None:
            return _arr(self.dt_sigma(_arr(t), _arr(x)))
        if self.autonomous:
            return np.zeros(np.broadcast(_arr(t), _arr(x)).shape)
        raise MissingDerivativeError(f"{self.name or 'sigma'}: dt_sigma not supplied")

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise MissingDerivativeError(
                f"coefficient {self.name!r} lacks {', '.join(missing)}")

    def with_drift(self, beta=None, dx_beta=None, alpha=None) -> "Coefficient":
        return replace(self, beta=beta, dx_beta=dx_beta, alpha=alpha)


def _linear() -> Coefficient:
    return Coefficient(
        sigma=lambda t, x: np.broadcast_to(_arr(x), np.broadcast(_arr(t), _arr(x)).shape).copy(),
        dx_sigma=_const(1.0), dx2_sigma=_const(0.0), dt_sigma=_const(0.0), autonomous=True,
        closed_h=lambda t, x, c: np.log(_arr(x) / c),
        closed_k=lambda t, y, c: c * np.exp(_arr(y)),
        declared_smoothness={"x": math.inf, "t": math.inf}, name="linear")


def _sqrt1px2() -> Coefficient:
    return Coefficient(
        sigma=lambda t, x: np.sqrt(1.0 + _arr(x) ** 2) + 0.0 * _arr(t),
        dx_sigma=lambda t, x: _arr(x) / np.sqrt(1.0 + _arr(x) ** 2) + 0.0 * _arr(t),
        dx2_sigma=lambda t, x: (1.0 + _arr(x) ** 2) ** -1.5 + 0.0 * _arr(t),
        dt_sigma=_const(0.0), autonomous=True,
        closed_h=lambda t, x, c: np.arcsinh(_arr(x)) - math.asinh(c),
        closed_k=lambda t, y, c: np.sinh(_arr(y) + math.asinh(c)),
        declared_smoothness={"x": math.inf, "t": math.inf}, name="sqrt1px2")


def _abs_pow(a: float) -> Coefficient:
    if not a > 0:
        raise ValueError("abs_pow exponent must be positive")

    def prim(x):
        # antiderivative of |x|^-a on either side of 0 (a != 1)
        x = _arr(x)
        return np.sign(x) * np.abs(x) ** (1 - a) / (1 - a)

    def prim_inv(v):
        v = _arr(v)
        return np.sign(v) * np.abs((1 - a) * v) ** (1 / (1 - a))

    closed_h = closed_k = None
    if a != 1:
        closed_h = lambda t, x, c: prim(x) - prim(c)  # noqa: E731
        closed_k = lambda t, y, c: prim_inv(_arr(y) + prim(c))  # noqa: E731
    return Coefficient(
        sigma=lambda t, x: np.abs(_arr(x)) ** a + 0.0 * _arr(t),
        dx_sigma=lambda t, x: a * np.sign(x) * np.abs(_arr(x)) ** (a - 1) + 0.0 * _arr(t),
        dx2_sigma=lambda t, x: a * (a - 1) * np.abs(_arr(x)) ** (a - 2) + 0.0 * _arr(t),
        dt_sigma=_const(0.0), autonomous=True, closed_h=closed_h, closed_k=closed_k,
        declared_smoothness={"x_holder": min(a, 1.0), "t": math.inf}, name=f"abs_pow:{a:g}")


def _sin_pi() -> Coefficient:
    pi = math.pi
    return Coefficient(
        sigma=lambda t, x: np.sin(pi * _arr(x)) + 0.0 * _arr(t),
        dx_sigma=lambda t, x: pi * np.cos(pi * _arr(x)) + 0.0 * _arr(t),
        dx2_sigma=lambda t, x: -pi * pi * np.sin(pi * _arr(x)) + 0.0 * _arr(t),
        dt_sigma=_const(0.0), autonomous=True,
        closed_h=lambda t, x, c: (np.log(np.abs(np.tan(pi * _arr(x) / 2)))
                                  - math.log(abs(math.tan(pi * c / 2)))) / pi,
        declared_smoothness={"x": math.inf, "t": math.inf}, name="sin_pi")


BUILTINS = ("linear", "sqrt1px2", "abs_pow", "sin_pi")


def from_expressions(sigma: str, beta: str | None = None, alpha: str | None = None) -> Coefficient:
    """Coefficient from expression strings over t and x."""
    from . import expr

    d = expr.derivatives(sigma)
    autonomous = "t" not in {str(s) for s in d["f"].expr.free_symbols}
    coeff = Coefficient(sigma=d["f"], dx_sigma=d["dx"], dx2_sigma=d["dx2"], dt_sigma=d["dt"],
                        autonomous=autonomous, name=sigma,
                        declared_smoothness={"source": "expression"})
    if beta is not None:
        db = expr.derivatives(beta, order=1)
        coeff.beta, coeff.dx_beta = db["f"], db["dx"]
        coeff.autonomous &= "t" not in {str(s) for s in db["f"].expr.free_symbols}
    if alpha is not None:
        da = expr.derivatives(alpha, order=1)
        coeff.alpha = da["f"]
        coeff.autonomous &= "t" not in {str(s) for s in da["f"].expr.free_symbols}
    return coeff


def coefficient(spec: str, beta: str | None = None, alpha: str | None = None) -> Coefficient:
    """Resolve a built-in name (``"abs_pow:0.5"`` style) or an expression."""
    name, _, arg = spec.strip().partition(":")
    if name == "linear":
        c = _linear()
    elif name == "sqrt1px2":
        c = _sqrt1px2()
    elif name == "abs_pow":
        c = _abs_pow(float(arg))
    elif name == "sin_pi":
        c = _sin_pi()
    else:
        return from_expressions(spec, beta, alpha)
    if beta is not None or alpha is not None:
        from . import expr

        if beta is not None:
            db = expr.derivatives(beta, order=1)
            c.beta, c.dx_beta = db["f"], db["dx"]
        if alpha is not None:
            c.alpha = expr.derivatives(alpha, order=1)["f"]
    return c


def check_derivatives(coeff: Coefficient, probes_x, probes_t=(0.0, 0.5, 1.0),
                      rtol: float = 1e-6) -> dict:
    """Max relative mismatch between supplied derivatives and central differences."""
    x = _arr(probes_x)
    out = {}
    pairs = [("dx_sigma", coeff.sigma, "x"), ("dx2_sigma", coeff.dx_sigma, "x"),
             ("dt_sigma", coeff.sigma, "t"), ("dx_beta", coeff.beta, "x")]
    for name, base, var in pairs:
        deriv = getattr(coeff, name)
        if deriv is None or base is None:
            continue
        worst = 0.0
        for t in probes_t:
            if var == "x":
                h = 1e-5 * np.maximum(1.0, np.abs(x))
                fd = (base(t, x + h) - base(t, x - h)) / (2 * h)
            else:
                h = 1e-5
                fd = (base(t + h, x) - base(t - h, x)) / (2 * h)
            exact = _arr(deriv(t, x))
            rel = np.abs(exact - fd) / np.maximum(1.0, np.abs(exact))
            worst = max(worst, float(rel.max()))
        out[name] = worst
    out["ok"] = all(v <= rtol for k, v in out.items())
    return out


# --------------------------------------------------------------------------
# support

@dataclass(frozen=True)
class SupportComponent:
    a: float
    b: float
    c: float
    index: int
    sign: int
    window: tuple = (-math.inf, math.inf)

    @property
    def bounds(self) -> tuple[float, float]:
        """Endpoints with infinite ones replaced by the window edges."""
        lo, hi = self.window
        return (self.a if math.isfinite(self.a) else lo, self.b if math.isfinite(self.b) else hi)

    def contains(self, x) -> np.ndarray:
        x = _arr(x)
        return (x > self.a) & (x < self.b)


def _zero_intervals(sig_row: np.ndarray, xs: np.ndarray, f, zero_tol: float) -> list:
    """Zero intervals [lo, hi] of one sampled row; point zeros have lo == hi."""
    # undefined samples (0 * inf style) are treated as zeros of sigma
    small = ~np.isfinite(sig_row) | (np.abs(sig_row) <= zero_tol)
    zeros = []
    k, n = 0, xs.size
    while k < n:
        if small[k]:
            j = k
            while j + 1 < n and small[j + 1]:
                j += 1
            zeros.append((xs[k], xs[j]))
            k = j + 1
            continue
        if k + 1 < n and not small[k + 1] and np.sign(sig_row[k]) != np.sign(sig_row[k + 1]):
            r = optimize.brentq(f, xs[k], xs[k + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps)
            zeros.append((r, r))
        k += 1
    # touching zeros (|sigma| dips to zero without a sign change)
    mag = np.abs(sig_row)
    for k in range(1, n - 1):
        if small[k] or not (mag[k] <= mag[k - 1] and mag[k] <= mag[k + 1]):
            continue
        if np.sign(sig_row[k - 1]) != np.sign(sig_row[k + 1]):
            continue
        res = optimize.minimize_scalar(lambda z: abs(float(f(z))), bounds=(xs[k - 1], xs[k + 1]),
                                       method="bounded", options={"xatol": 1e-12})
        if res.fun <= zero_tol:
            zeros.append((res.x, res.x))
    zeros.sort()
    merged = []
    for lo, hi in zeros:
        if merged and lo <= merged[-1][1] + 1e-12:
            merged[-1] = (merged[-1][0], max(hi, merged[-1][1]))
        else:
            merged.append((lo, hi))
    return merged


def decompose_support(coeff: Coefficient, window=(-10.0, 10.0), zero_tol: float = 1e-9,
                      n_x: int = 4001, t_probes=(0.0, 0.25, 0.5, 0.75, 1.0)) -> list:
    """Maximal intervals of the window on which sigma does not vanish.

    Components that reach a window edge where sigma is non-zero get an infinite
    endpoint there; :attr:`SupportComponent.bounds` gives the truncated view.
    """
    lo, hi = map(float, window)
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ValueError("window must be a finite interval")
    xs = np.linspace(lo, hi, n_x)
    dx = xs[1] - xs[0]
    sets = []
    for t in t_probes:
        with np.errstate(all="ignore"):
            row = coeff.sig(t, xs)
        f = lambda z, t=t: float(coeff.sig(t, z))  # noqa: E731
        sets.append(_zero_intervals(row, xs, f, zero_tol))
    ref = sets[0]
    for t, zs in zip(t_probes[1:], sets[1:]):
        if len(zs) != len(ref) or any(
                abs(p[0] - q[0]) > zero_tol + 1e-10 or abs(p[1] - q[1]) > zero_tol + 1e-10
                for p, q in zip(zs, ref)):
            raise SupportError(f"zero set of sigma changes with t (compare t=0 and t={t})")
    for (l1, h1), (l2, _) in zip(ref, ref[1:]):
        if l2 - h1 < 2 * dx:
            raise SupportError("component narrower than the sampling step; refine the window")
    edges = [(-math.inf, lo)] + ref + [(hi, math.inf)]
    comps = []
    for left, right in zip(edges, edges[1:]):
        a, b = left[1], right[0]
        if b - a <= 0:
            continue
        if left[0] == -math.inf and abs(float(coeff.sig(0.0, lo))) > zero_tol:
            a = -math.inf
        if right[1] == math.inf and abs(float(coeff.sig(0.0, hi))) > zero_tol:
            b = math.inf
        if math.isfinite(a) and math.isfinite(b):
            c = 0.5 * (a + b)
        elif math.isfinite(a):
            c = a + min(1.0, 0.5 * (hi - a))
        elif math.isfinite(b):
            c = b - min(1.0, 0.5 * (b - lo))
        else:
            c = 0.5 * (lo + hi)
        sign = int(np.sign(float(coeff.sig(0.0, c))))
        probe = np.linspace(*(_shrink(a, b, lo, hi)), 64)
        signs = np.sign(coeff.sig(np.array(t_probes)[:, None], probe[None, :]))
        if not np.all(signs == sign):
            raise SupportError(f"sigma changes sign inside component ({a}, {b})")
        comps.append(SupportComponent(a, b, c, len(comps), sign, (lo, hi)))
    return comps


def _shrink(a, b, lo, hi):
    a, b = (a if math.isfinite(a) else lo), (b if math.isfinite(b) else hi)
    pad = 1e-3 * (b - a)
    return a + pad, b - pad


def locate(components, x: float) -> SupportComponent | None:
    for comp in components:
        if comp.a < x < comp.b:
            return comp
    return None


# --------------------------------------------------------------------------
# charts

class _Chart:
    def __init__(self, comp: SupportComponent):
        self.a, self.b, self.c = comp.a, comp.b, comp.c
        fa, fb = math.isfinite(self.a), math.isfinite(self.b)
        self.kind = {(True, True): "both", (True, False): "lower",
                     (False, True): "upper", (False, False): "none"}[(fa, fb)]

    def phi(self, u):
        u = _arr(u)
        a, b = self.a, self.b
        with np.errstate(over="ignore"):
            if self.kind == "both":
                e = np.exp(-np.abs(u))
                near = (b - a) * e / (1 + e)
                return np.where(u < 0, a + near, b - near)
            if self.kind == "lower":
                return a + np.exp(u)
            if self.kind == "upper":
                return b - np.exp(-u)
            return self.c + np.sinh(u)

    def dphi(self, u):
        u = _arr(u)
        with np.errstate(over="ignore"):
            if self.kind == "both":
                e = np.exp(-np.abs(u))
                return (self.b - self.a) * e / (1 + e) ** 2
            if self.kind == "lower":
                return np.exp(u)
            if self.kind == "upper":
                return np.exp(-u)
            return np.cosh(u)

    def inv(self, x):
        x = _arr(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "both":
                return np.log(x - self.a) - np.log(self.b - x)
            if self.kind == "lower":
                return np.log(x - self.a)
            if self.kind == "upper":
                return -np.log(self.b - x)
            return np.arcsinh(x - self.c)


class _Table:
    """Cumulative panel integrals of one integrand at fixed t, grown on demand."""

    MAX_SPAN = 3000.0  # chart units covered on each side at most

    def __init__(self, g, u0: float, width: float):
        self.g, self.u0, self.w = g, u0, width
        self.MAX_PANELS = int(self.MAX_SPAN / width)
        self.up = np.zeros(1)
        self.dn = np.zeros(1)
        self.up_done = self.dn_done = False

    def _grow(self, side: str, need: int) -> None:
        cum = self.up if side == "up" else self.dn
        if need < cum.size or getattr(self, f"{side}_done"):
            return
        target = min(max(need + 1, 2 * cum.size, 32), self.MAX_PANELS + 1)
        first = cum.size - 1
        count = target - cum.size
        if count <= 0:
            setattr(self, f"{side}_done", True)
            return
        with np.errstate(all="ignore"):
            if side == "up":
                vals = _quad.gl_panels(self.g, self.u0, self.w, count, first)
            else:
                vals = _quad.gl_panels(self.g, self.u0, -self.w, count, first)
        bad = ~np.isfinite(vals)
        if bad.any():
            vals = vals[: int(np.argmax(bad))]
            setattr(self, f"{side}_done", True)
        cum = np.concatenate([cum, cum[-1] + np.cumsum(vals)])
        if target == self.MAX_PANELS + 1:
            setattr(self, f"{side}_done", True)
        setattr(self, side, cum)

    def __call__(self, u) -> np.ndarray:
        """int_{u0}^{u} g; NaN where the panels are out of reach."""
        u = _arr(u)
        d = u - self.u0
        out = np.full(u.shape, np.nan)
        fin = np.isfinite(d)
        for side, mask, sgn in (("up", fin & (d >= 0), 1.0), ("dn", fin & (d < 0), -1.0)):
            if not mask.any():
                continue
            # clamp before the cast: past MAX_PANELS the answer is NaN anyway
            j = np.minimum(np.floor(np.abs(d[mask]) / self.w), self.MAX_PANELS + 1).astype(np.int64)
            self._grow(side, int(j.max()))
            cum = self.up if side == "up" else self.dn
            ok = j < cum.size
            vals = np.full(j.shape, np.nan)
            if ok.any():
                start = self.u0 + sgn * j[ok] * self.w
                with np.errstate(all="ignore"):
                    part = _quad.gl_interval(self.g, start, u[mask][ok])
                # both tables hold signed integrals int_{u0}^{u0 +- j w}
                vals[ok] = cum[j[ok]] + part
            out[mask] = vals
        return out


class HKPair:
    """H^n, its inverse K^n and dt H^n on one component.

    Closed forms on the coefficient are used when ``use_closed_form`` is set.
    Numeric tables are memoized per t and owned by this instance.
    """

    WIDTHS = (0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625)

    def __init__(self, component: SupportComponent, coeff: Coefficient,
                 use_closed_form: bool = False, panel_width: float | None = None,
                 self_check: bool = True):
        self.component = component
        self.coeff = coeff
        self.chart = _Chart(component)
        self.uc = float(self.chart.inv(component.c))
        self.closed = use_closed_form and coeff.closed_h is not None
        self.closed_k = use_closed_form and coeff.closed_k is not None
        self._h_tables: dict = {}
        self._dt_tables: dict = {}
        self._lock = threading.Lock()
        widths = self.WIDTHS if panel_width is None else (float(panel_width),)
        self.width = widths[0]
        if self_check and not self.closed:
            worst = math.inf
            for w in widths:
                worst = self._panel_mismatch(w)
                if worst <= 1e-10:
                    self.width = w
                    break
            else:
                raise QuadratureError(
                    f"H quadrature not resolved (panel check mismatch {worst:.2e} at width "
                    f"{widths[-1]}); sigma varies too fast on this component")

    # -- integrands in chart coordinates
    def _g_h(self, t):
        chart, coeff = self.chart, self.coeff
        return lambda u: chart.dphi(u) / coeff.sig(t, chart.phi(u))

    def _g_dt(self, t):
        chart, coeff = self.chart, self.coeff

        def g(u):
            z = chart.phi(u)
            return -chart.dphi(u) * coeff.dt_sig(t, z) / coeff.sig(t, z) ** 2
        return g

    def _table(self, store: dict, t: float, make):
        key = 0.0 if self.coeff.autonomous else float(t)
        with self._lock:
            tab = store.get(key)
            if tab is None:
                tab = store[key] = _Table(make(key), self.uc, self.width)
            return tab

    def _probes(self) -> np.ndarray:
        """Chart points covering the window part of the component and its edges."""
        a, b = self.component.a, self.component.b
        lo, hi = self.component.bounds
        span = hi - lo
        xs = list(lo + span * np.array([0.1, 0.3, 0.5, 0.7, 0.9]))
        for end, inward in ((a, 1.0), (b, -1.0)):
            if math.isfinite(end):
                # keep clear of the rounding floor near the end point
                floor = 1e8 * np.spacing(abs(end))
                xs += [end + inward * max(span * f, floor) for f in (1e-9, 1e-5, 1e-2)]
        if not math.isfinite(a):
            xs += [lo, lo - span]
        if not math.isfinite(b):
            xs += [hi, hi + span]
        xs = np.array([x for x in xs if a < x < b])
        return self.chart.inv(xs)

    def _panel_mismatch(self, width: float) -> float:
        probes = self._probes()
        worst = 0.0
        for t in (0.0, 1.0) if not self.coeff.autonomous else (0.0,):
            g = self._g_h(t)
            coarse = _Table(g, self.uc, width)(probes)
            fine = _Table(g, self.uc, width / 2)(probes)
            ok = np.isfinite(coarse) & np.isfinite(fine)
            if ok.any():
                err = np.abs(coarse[ok] - fine[ok]) / np.maximum(1.0, np.abs(fine[ok]))
                worst = max(worst, float(err.max()))
        return worst

    # -- public evaluators
    def G(self, t: float, u):
        """H in chart coordinates."""
        return self._table(self._h_tables, t, self._g_h)(u)

    def h(self, t: float, x):
        x = _arr(x)
        if self.closed:
            return _arr(self.coeff.closed_h(t, x, self.component.c))
        inside = self.component.contains(x)
        out = np.full(x.shape, np.nan)
        if inside.any():
            out[inside] = self.G(t, self.chart.inv(x[inside]))
        return out

    def dt_h(self, t: float, x):
        x = _arr(x)
        if self.coeff.autonomous:
            return np.zeros(x.shape)
        return self._table(self._dt_tables, t, self._g_dt)(self.chart.inv(x))

    def k(self, t: float, y, guess=None):
        y = _arr(y)
        if self.closed_k:
            return _arr(self.coeff.closed_k(t, y, self.component.c))
        return self.chart.phi(self._invert(t, y, guess))

    # -- inversion
    def _invert(self, t: float, y: np.ndarray, guess=None) -> np.ndarray:
        s = float(self.component.sign)
        y = np.atleast_1d(y).astype(float)
        shape = y.shape
        y = y.ravel()
        G = lambda u: s * self.G(t, u)  # noqa: E731  increasing in u
        dG = lambda u: s * self.chart.dphi(u) / self.coeff.sig(t, self.chart.phi(u))  # noqa: E731
        target = s * y
        if guess is not None:
            u = np.broadcast_to(self.chart.inv(_arr(guess)), y.shape).astype(float).copy()
            u[~np.isfinite(u)] = self.uc
        else:
            u = np.full(y.shape, self.uc)
        # fast path: plain Newton from the guess
        with np.errstate(all="ignore"):
            for _ in range(8):
                r = G(u) - target
                step = r / dG(u)
                if not np.all(np.isfinite(step)):
                    break
                u = u - step
                if np.all(np.abs(step) <= 1e-14 * (1.0 + np.abs(u))):
                    r = G(u) - target
                    if np.all(np.abs(r) <= 1e-13 * (1.0 + np.abs(target))):
                        return u.reshape(shape)
                    break
        return self._bracketed(G, dG, target, shape)

    def _bracketed(self, G, dG, target, shape) -> np.ndarray:
        # expand away from the anchor until target is bracketed; G is NaN past
        # the last representable chart coordinate
        up = G(np.full(target.shape, self.uc)) < target
        sgn = np.where(up, 1.0, -1.0)
        near = np.full(target.shape, self.uc)
        far = np.full(target.shape, np.nan)
        open_ = np.ones(target.shape, dtype=bool)
        for step in (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 745.0):
            if not open_.any():
                break
            u = self.uc + sgn[open_] * step
            with np.errstate(all="ignore"):
                g = G(u)
            hit = np.where(up[open_], g >= target[open_], g <= target[open_])
            lost = np.isnan(g)
            idx = np.flatnonzero(open_)
            far[idx[hit]] = u[hit]
            if lost.any():
                # refine the reachable frontier between the last good and the NaN point
                for i, ub in zip(idx[lost], u[lost]):
                    ua = near[i]
                    for _ in range(60):
                        um = 0.5 * (ua + ub)
                        gm = float(G(np.array([um]))[0])
                        if np.isnan(gm):
                            ub = um
                        else:
                            ua = um
                    ga = float(G(np.array([ua]))[0])
                    if (ga >= target[i]) if up[i] else (ga <= target[i]):
                        far[i] = ua
                    else:
                        yb = float(target[i]) * self.component.sign
                        raise InversionError(
                            f"y={yb!r} is outside the reachable range of H on component "
                            f"({self.component.a}, {self.component.b})")
            keep = ~hit & ~lost
            near[idx[keep]] = u[keep]
            open_[idx[hit | lost]] = False
        if open_.any():
            yb = float(target[open_][0]) * self.component.sign
            raise InversionError(f"y={yb!r} is outside the reachable range of H")
        lo = np.where(up, near, far)
        hi = np.where(up, far, near)
        u = 0.5 * (lo + hi)
        with np.errstate(all="ignore"):
            for _ in range(200):
                r = G(u) - target
                lo = np.where(r <= 0, u, lo)
                hi = np.where(r > 0, u, hi)
                newton = u - r / dG(u)
                inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
                u_new = np.where(inside, newton, 0.5 * (lo + hi))
                done = np.abs(u_new - u) <= 1e-14 * (1.0 + np.abs(u))
                u = u_new
                if np.all(done | (hi - lo <= 1e-15 * (1.0 + np.abs(u)))):
                    break
            else:
                raise InversionError("K inversion did not converge")
        return u.reshape(shape)


def build_H(component: SupportComponent, coeff: Coefficient, use_closed_form: bool = False,
            **kw) -> HKPair:
    return HKPair(component, coeff, use_closed_form=use_closed_form, **kw)


def build_K(hk: HKPair, component: SupportComponent | None = None,
            coeff: Coefficient | None = None) -> HKPair:
    """K lives on the same object; this exercises it once as a build check."""
    y = hk.h(0.0, hk.component.c)
    x = hk.k(0.0, y)
    if not np.allclose(x, hk.component.c, rtol=1e-8, atol=1e-8):
        raise InversionError("K(H(c)) != c on the anchor")
    return hk


# --------------------------------------------------------------------------
# (H2) probing

@dataclass
class EndpointVerdict:
    endpoint: float
    verdict: str
    partial_sum: float
    increments: np.ndarray
    power: float
    tail_bound: float

    def __str__(self):
        return self.verdict


def _increments_towards(coeff, comp: SupportComponent, side: str, t: float) -> np.ndarray:
    c = comp.c
    end = comp.a if side == "lower" else comp.b
    inward = 1.0 if side == "lower" else -1.0
    panels = 4

    def integrate(dist_hi, dist_lo, base, direction):
        # int over z = base + direction * e^v, v in [log dist_lo, log dist_hi]
        vlo, vhi = math.log(dist_lo), math.log(dist_hi)
        edges = np.linspace(vlo, vhi, panels + 1)

        def g(v):
            z = base + direction * np.exp(v)
            return np.exp(v) / np.abs(coeff.sig(t, z))
        with np.errstate(all="ignore"):
            return float(_quad.gl_interval(g, edges[:-1], edges[1:]).sum())

    incs = []
    if math.isfinite(end):
        d0 = abs(c - end)
        floor = max(1e-300, 1e6 * np.spacing(abs(end))) if end != 0 else 1e-300
        d = d0
        while d / 10 > floor and len(incs) < 300:
            incs.append(integrate(d, d / 10, end, inward))
            d /= 10
    else:
        direction = -inward  # toward the infinite end
        for k in range(0, 200):
            val = integrate(2.0 ** (k + 1), 2.0**k, c, direction)
            if not math.isfinite(val):
                break
            incs.append(val)
    return np.asarray(incs)


def _verdict(incs: np.ndarray, endpoint: float, cap: float = 1e3) -> EndpointVerdict:
    if incs.size < 4:
        return EndpointVerdict(endpoint, "inconclusive", float(incs.sum()), incs, math.nan, math.inf)
    if not np.all(np.isfinite(incs)):
        return EndpointVerdict(endpoint, "diverges", math.inf, incs, math.nan, math.inf)
    total = float(incs.sum())
    tail = incs[-min(10, incs.size):]
    k = np.arange(1, incs.size + 1, dtype=float)
    half = slice(incs.size // 2, None)
    pos = incs[half] > 0
    if pos.sum() >= 2:
        power = float(np.polyfit(np.log(k[half][pos]), np.log(incs[half][pos]), 1)[0])
    else:
        power = -math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = tail[1:] / tail[:-1]
    rmax = float(np.nanmax(ratios)) if ratios.size else math.nan
    if rmax < 0.9:
        bound = float(incs[-1] * rmax / (1 - rmax))
        if bound < 1e-3:
            return EndpointVerdict(endpoint, "converges", total, incs, power, bound)
    if power >= -1.02 or total > cap:
        return EndpointVerdict(endpoint, "diverges", total, incs, power, math.inf)
    bound = float(incs[-1] * incs.size / (-power - 1))
    verdict = "converges" if bound < 1e-3 else "inconclusive"
    return EndpointVerdict(endpoint, verdict, total, incs, power, bound)


def check_H2(component: SupportComponent, coeff: Coefficient, t: float = 0.0) -> dict:
    """Divergence of int 1/|sigma| toward each endpoint: per-endpoint verdicts.

    Finite endpoints are approached by decades, infinite ones by dyadic
    blocks. ``"diverges"``: the increments do not decay faster than 1/k (or
    the partial sum passes 1e3). ``"converges"``: geometric decay with a tail
    bound under 1e-3, or a power-law tail bounded the same way.
    """
    out = {}
    for side, end in (("lower", component.a), ("upper", component.b)):
        incs = _increments_towards(coeff, component, side, t)
        out[side] = _verdict(incs, end)
    return out


# --------------------------------------------------------------------------
# advisory conditions

def holder_slope(f, x0: float, side: float = 1.0, decades: int = 6) -> float:
    """Exponent delta in |f(x0 + s h) - f(x0)| ~ h^delta, fitted over decades."""
    hs = 10.0 ** -np.arange(1, decades + 1)
    d = np.abs(f(x0 + side * hs) - f(x0))
    ok = d > 0
    if ok.sum() < 2:
        return math.inf
    return float(np.polyfit(np.log(hs[ok]), np.log(d[ok]), 1)[0])


def check_conditions(coeff: Coefficient, components, n_x: int = 201,
                     t_probes=(0.0, 0.25, 0.5, 0.75, 1.0), hk_pairs=None) -> dict:
    """Advisory sup / exponent estimates for the regularity hypotheses.

    Keys: ``H3_iii`` (sup |dt log|sigma||), ``H3_iv`` and ``H4_iii`` (sup of
    the growth ratio against 1 + |H|, when H is available), ``H4_i`` (sup |beta|),
    ``H1p_holder`` (smallest local Hoelder exponent of sigma in x, probes
    include the component endpoints), ``H3p_iii`` (int sup_t |dt sigma / sigma^2|).
    Nothing here ever blocks a solve.
    """
    tt = np.asarray(t_probes, dtype=float)[:, None]
    report = {"components": []}
    for i, comp in enumerate(components):
        lo, hi = _shrink(comp.a, comp.b, *comp.window)
        xs = np.linspace(lo, hi, n_x)[None, :]
        sig = coeff.sig(tt, xs)
        entry = {"index": comp.index}
        try:
            dts = coeff.dt_sig(tt, xs)
            entry["H3_iii"] = float(np.max(np.abs(dts / sig)))
            g = np.max(np.abs(dts / sig**2), axis=0)
            entry["H3p_iii"] = float(np.sum(0.5 * (g[1:] + g[:-1]) * np.diff(xs[0])))
        except MissingDerivativeError:
            entry["H3_iii"] = math.nan
        beta = coeff.beta(tt, xs) if coeff.beta is not None else np.zeros_like(sig)
        entry["H4_i"] = float(np.max(np.abs(beta)))
        hk = hk_pairs[i] if hk_pairs is not None else None
        if hk is not None:
            H = np.stack([hk.h(float(t), xs[0]) for t in tt[:, 0]])
            denom = 1.0 + np.abs(H)
            if coeff.dx_sigma is not None and coeff.dx2_sigma is not None:
                grow = np.abs(coeff.dx_sigma(tt, xs)) ** 2 + np.abs(sig * coeff.dx2_sigma(tt, xs))
                entry["H3_iv"] = float(np.max(grow / denom))
            drift = np.abs(coeff.alpha(tt, xs)) if coeff.alpha is not None else 0.0
            if coeff.dx_beta is not None:
                drift = drift + np.abs(sig) * np.abs(coeff.dx_beta(tt, xs))
            entry["H4_iii"] = float(np.max(np.asarray(drift) / denom))
        f0 = lambda z: coeff.sig(0.0, z)  # noqa: E731
        probes = [p for p in np.linspace(lo, hi, 7)]
        slopes = []
        for p in probes:
            for side in (1.0, -1.0):
                if comp.a < p + side * 0.1 < comp.b:
                    slopes.append(holder_slope(f0, p, side))
        for end, side in ((comp.a, 1.0), (comp.b, -1.0)):
            if math.isfinite(end):
                slopes.append(holder_slope(f0, end, side))
        entry["H1p_holder"] = float(min(1.0, min(slopes))) if slopes else math.nan
        report["components"].append(entry)
    if coeff.autonomous:
        report["H3_iii"] = 0.0
    else:
        vals = [c.get("H3_iii", math.nan) for c in report["components"]]
        report["H3_iii"] = float(np.nanmax(vals)) if vals else math.nan
    report["H4_i"] = max((c["H4_i"] for c in report["components"]), default=0.0)
    report["H1p_holder"] = min((c["H1p_holder"] for c in report["components"]), default=math.nan)
    return report


def warn_conditions(report: dict) -> None:
    if report.get("H4_i", 0.0) > 1e6:
        warnings.warn("beta looks unbounded on the probe lattice", RuntimeWarning, stacklevel=2)
