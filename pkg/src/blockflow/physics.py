"""Gas model, state conversions, flux functions and manufactured-solution sources.

Conventions used throughout:

- Primitive variables are (rho, u, v, w, p) with temperature T = p / (rho * R).
- Conserved variables are (rho, rho*u, rho*v, rho*w, rho*e_t).
- Flux vectors are 5-vectors of normal-flux densities per unit area in the
  order (mass, x-momentum, y-momentum, z-momentum, energy); 2D runs simply
  carry w = 0 and a zero z-momentum component.
- All flux routines are written against numpy arrays and broadcast, so the
  same code serves scalar spot checks and whole-face batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import sympy as sp

from .errors import NonPhysicalStateError

__all__ = [
    "GasModel",
    "PrimitiveState",
    "ConservedState",
    "sound_speed",
    "primitive_to_conserved",
    "conserved_to_primitive",
    "encode_primitive",
    "decode_conserved",
    "inviscid_normal_flux",
    "inviscid_flux_arrays",
    "roe_flux",
    "roe_flux_arrays",
    "van_leer_flux",
    "van_leer_flux_arrays",
    "viscous_normal_flux",
    "viscous_flux_arrays",
    "manufactured_solution",
    "mms_source",
    "MMS_IDS",
]


@dataclass(frozen=True)
class GasModel:
    """Perfect-gas model with an optional viscosity law.

    gamma      : ratio of specific heats (> 1)
    R          : specific gas constant [J/(kg K)]
    mu         : constant dynamic viscosity [Pa s]; used when sutherland is None
    sutherland : optional (mu_ref, T_ref, S) triple for Sutherland's law
    prandtl    : Prandtl number
    """

    gamma: float = 1.4
    R: float = 287.0
    mu: float = 0.0
    sutherland: tuple | None = None
    prandtl: float = 0.72

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        if not self.R > 0.0:
            raise ValueError(f"R must be positive, got {self.R}")
        if self.mu < 0.0:
            raise ValueError(f"mu must be non-negative, got {self.mu}")

    @property
    def cp(self) -> float:
        return self.gamma * self.R / (self.gamma - 1.0)

    @property
    def cv(self) -> float:
        return self.R / (self.gamma - 1.0)

    def viscosity(self, T):
        """Dynamic viscosity at temperature T (array or scalar)."""
        if self.sutherland is None:
            return self.mu if np.isscalar(T) else np.full_like(np.asarray(T, float), self.mu)
        mu_ref, t_ref, s = self.sutherland
        T = np.asarray(T, float)
        return mu_ref * (T / t_ref) ** 1.5 * (t_ref + s) / (T + s)

    def conductivity(self, T):
        """Thermal conductivity k = mu * cp / Pr."""
        return self.viscosity(T) * self.cp / self.prandtl


@dataclass(frozen=True)
class PrimitiveState:
    """One primitive flow state; T is stored and kept consistent with p/(rho R)."""

    rho: float
    u: float
    v: float
    w: float
    p: float
    T: float

    @classmethod
    def from_rho_p(cls, rho, u, v, w, p, gas: GasModel) -> "PrimitiveState":
        return cls(rho, u, v, w, p, p / (rho * gas.R))

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.u, self.v, self.w])

    @property
    def physical(self) -> bool:
        return self.rho > 0.0 and self.p > 0.0 and self.T > 0.0

    def sound_speed(self, gas: GasModel) -> float:
        return float(np.sqrt(gas.gamma * self.p / self.rho))


@dataclass(frozen=True)
class ConservedState:
    rho: float
    rho_u: float
    rho_v: float
    rho_w: float
    rho_et: float

    def as_array(self) -> np.ndarray:
        return np.array([self.rho, self.rho_u, self.rho_v, self.rho_w, self.rho_et])


def sound_speed(rho, p, gamma):
    return np.sqrt(gamma * p / rho)


def encode_primitive(rho, u, v, w, p, gamma):
    """Primitive component arrays -> tuple of 5 conserved component arrays."""
    ke = 0.5 * (u * u + v * v + w * w)
    rho_et = p / (gamma - 1.0) + rho * ke
    return rho, rho * u, rho * v, rho * w, rho_et


def decode_conserved(q0, q1, q2, q3, q4, gamma):
    """Conserved component arrays -> (rho, u, v, w, p). No flooring is applied."""
    u = q1 / q0
    v = q2 / q0
    w = q3 / q0
    p = (gamma - 1.0) * (q4 - 0.5 * (q1 * u + q2 * v + q3 * w))
    return q0, u, v, w, p


def primitive_to_conserved(q: PrimitiveState, gas: GasModel) -> ConservedState:
    rho, ru, rv, rw, ret = encode_primitive(q.rho, q.u, q.v, q.w, q.p, gas.gamma)
    return ConservedState(float(rho), float(ru), float(rv), float(rw), float(ret))


def conserved_to_primitive(c: ConservedState, gas: GasModel) -> PrimitiveState:
    """Invert primitive_to_conserved. Non-physical inputs decode with the
    `physical` flag False; callers decide whether that is an error."""
    rho, u, v, w, p = decode_conserved(c.rho, c.rho_u, c.rho_v, c.rho_w, c.rho_et, gas.gamma)
    return PrimitiveState(float(rho), float(u), float(v), float(w), float(p),
                          float(p / (rho * gas.R)))


# ---------------------------------------------------------------------------
# Inviscid fluxes
# ---------------------------------------------------------------------------

def inviscid_flux_arrays(rho, u, v, w, p, nx, ny, nz, gamma):
    """Analytic inviscid normal flux [rho Vn, rho u Vn + nx p, ..., rho ht Vn]."""
    vn = u * nx + v * ny + w * nz
    ke = 0.5 * (u * u + v * v + w * w)
    ht = gamma / (gamma - 1.0) * p / rho + ke
    m = rho * vn
    return m, m * u + nx * p, m * v + ny * p, m * w + nz * p, m * ht


def inviscid_normal_flux(q: PrimitiveState, n, gas: GasModel) -> np.ndarray:
    nx, ny, nz = n
    return np.array(inviscid_flux_arrays(q.rho, q.u, q.v, q.w, q.p, nx, ny, nz, gas.gamma))


def _harten_abs(lam, delta):
    """|lam| with Harten's smoothing below the threshold delta (elementwise)."""
    a = np.abs(lam)
    safe = np.where(delta > 0.0, delta, 1.0)
    return np.where(a < delta, (lam * lam + delta * delta) / (2.0 * safe), a)


def roe_flux_arrays(wl, wr, nx, ny, nz, gamma, entropy_fix_coeff=0.1):
    """Roe flux-difference splitting on component arrays.

    wl, wr : tuples (rho, u, v, w, p) of left/right face states
    Returns the 5 flux component arrays. Raises NonPhysicalStateError if the
    Roe-averaged state has non-positive squared sound speed.
    """
    rl, ul, vl, wl_, pl = wl
    rr, ur, vr, wr_, pr = wr

    fl = inviscid_flux_arrays(rl, ul, vl, wl_, pl, nx, ny, nz, gamma)
    fr = inviscid_flux_arrays(rr, ur, vr, wr_, pr, nx, ny, nz, gamma)

    hl = gamma / (gamma - 1.0) * pl / rl + 0.5 * (ul * ul + vl * vl + wl_ * wl_)
    hr = gamma / (gamma - 1.0) * pr / rr + 0.5 * (ur * ur + vr * vr + wr_ * wr_)

    rt = np.sqrt(rr / rl)
    wfac = 1.0 / (1.0 + rt)
    rho = rt * rl
    u = (ul + rt * ur) * wfac
    v = (vl + rt * vr) * wfac
    w = (wl_ + rt * wr_) * wfac
    h = (hl + rt * hr) * wfac
    a2 = (gamma - 1.0) * (h - 0.5 * (u * u + v * v + w * w))
    if np.any(a2 <= 0.0):
        bad = np.argwhere(np.atleast_1d(a2) <= 0.0)
        raise NonPhysicalStateError(
            f"Roe-averaged state has non-positive sound speed at index {bad[0]}")
    a = np.sqrt(a2)
    vn = u * nx + v * ny + w * nz

    drho = rr - rl
    dp = pr - pl
    du = ur - ul
    dv = vr - vl
    dw = wr_ - wl_
    dvn = du * nx + dv * ny + dw * nz

    delta = entropy_fix_coeff * (np.abs(vn) + a)
    lam1 = _harten_abs(vn - a, delta)
    lam2 = _harten_abs(vn, delta)
    lam5 = _harten_abs(vn + a, delta)

    alpha1 = (dp - rho * a * dvn) / (2.0 * a2)
    alpha2 = drho - dp / a2
    alpha5 = (dp + rho * a * dvn) / (2.0 * a2)

    # Shear (tangential velocity) jump carried by the contact wave.
    su = du - dvn * nx
    sv = dv - dvn * ny
    sw = dw - dvn * nz

    ke = 0.5 * (u * u + v * v + w * w)
    d0 = lam1 * alpha1 + lam2 * alpha2 + lam5 * alpha5
    d1 = (lam1 * alpha1 * (u - a * nx) + lam2 * (alpha2 * u + rho * su)
          + lam5 * alpha5 * (u + a * nx))
    d2 = (lam1 * alpha1 * (v - a * ny) + lam2 * (alpha2 * v + rho * sv)
          + lam5 * alpha5 * (v + a * ny))
    d3 = (lam1 * alpha1 * (w - a * nz) + lam2 * (alpha2 * w + rho * sw)
          + lam5 * alpha5 * (w + a * nz))
    d4 = (lam1 * alpha1 * (h - a * vn)
          + lam2 * (alpha2 * ke + rho * (u * su + v * sv + w * sw))
          + lam5 * alpha5 * (h + a * vn))

    return tuple(0.5 * (l + r) - 0.5 * d
                 for l, r, d in zip(fl, fr, (d0, d1, d2, d3, d4)))


def roe_flux(qL: PrimitiveState, qR: PrimitiveState, n, gas: GasModel,
             entropy_fix_coeff=0.1) -> np.ndarray:
    nx, ny, nz = n
    out = roe_flux_arrays((qL.rho, qL.u, qL.v, qL.w, qL.p),
                          (qR.rho, qR.u, qR.v, qR.w, qR.p),
                          nx, ny, nz, gas.gamma, entropy_fix_coeff)
    return np.array(out)


def _van_leer_split(rho, u, v, w, p, nx, ny, nz, gamma, sign):
    """One-sided Van Leer split flux F+ (sign=+1) or F- (sign=-1)."""
    a = sound_speed(rho, p, gamma)
    vn = u * nx + v * ny + w * nz
    mn = vn / a
    ke = 0.5 * (u * u + v * v + w * w)
    ht = gamma / (gamma - 1.0) * p / rho + ke
    full = inviscid_flux_arrays(rho, u, v, w, p, nx, ny, nz, gamma)

    fm = sign * 0.25 * rho * a * (mn + sign) ** 2
    fac = (-vn + sign * 2.0 * a) / gamma
    f1 = fm * (u + nx * fac)
    f2 = fm * (v + ny * fac)
    f3 = fm * (w + nz * fac)
    fe = fm * (((gamma - 1.0) * vn + sign * 2.0 * a) ** 2 / (2.0 * (gamma * gamma - 1.0))
               + ke - 0.5 * vn * vn)

    sup = sign * mn >= 1.0       # fully upwind on this side
    sub = sign * mn <= -1.0      # fully downwind: this side contributes zero
    out = []
    for split, whole in zip((fm, f1, f2, f3, fe), full):
        comp = np.where(sup, whole, np.where(sub, np.zeros_like(split), split))
        out.append(comp)
    return tuple(out)


def van_leer_flux_arrays(wl, wr, nx, ny, nz, gamma):
    """Van Leer flux-vector splitting (classic form) on component arrays."""
    fp = _van_leer_split(*wl, nx, ny, nz, gamma, +1.0)
    fm = _van_leer_split(*wr, nx, ny, nz, gamma, -1.0)
    return tuple(a + b for a, b in zip(fp, fm))


def van_leer_flux(qL: PrimitiveState, qR: PrimitiveState, n, gas: GasModel) -> np.ndarray:
    nx, ny, nz = n
    out = van_leer_flux_arrays((qL.rho, qL.u, qL.v, qL.w, qL.p),
                               (qR.rho, qR.u, qR.v, qR.w, qR.p),
                               nx, ny, nz, gas.gamma)
    return np.array(out)


# ---------------------------------------------------------------------------
# Viscous flux
# ---------------------------------------------------------------------------

def viscous_flux_arrays(grad_vel, grad_t, u, v, w, mu, k, nx, ny, nz):
    """Viscous normal flux from face gradients.

    grad_vel : (3, 3) nest of arrays, grad_vel[i][j] = d(velocity_i)/d(x_j)
    grad_t   : (3,) nest of arrays, dT/dx_j
    u, v, w  : face-averaged velocity (for the work term)
    mu, k    : dynamic viscosity and conductivity at the face
    Stokes hypothesis: lambda = -2/3 mu. Mass component is identically zero.
    """
    dudx, dudy, dudz = grad_vel[0]
    dvdx, dvdy, dvdz = grad_vel[1]
    dwdx, dwdy, dwdz = grad_vel[2]
    div = dudx + dvdy + dwdz
    lam = -2.0 / 3.0 * mu

    txx = 2.0 * mu * dudx + lam * div
    tyy = 2.0 * mu * dvdy + lam * div
    tzz = 2.0 * mu * dwdz + lam * div
    txy = mu * (dudy + dvdx)
    txz = mu * (dudz + dwdx)
    tyz = mu * (dvdz + dwdy)

    fx = nx * txx + ny * txy + nz * txz
    fy = nx * txy + ny * tyy + nz * tyz
    fz = nx * txz + ny * tyz + nz * tzz

    theta_x = u * txx + v * txy + w * txz + k * grad_t[0]
    theta_y = u * txy + v * tyy + w * tyz + k * grad_t[1]
    theta_z = u * txz + v * tyz + w * tzz + k * grad_t[2]
    fe = nx * theta_x + ny * theta_y + nz * theta_z

    zero = np.zeros_like(fx)
    return zero, fx, fy, fz, fe


def viscous_normal_flux(grad_vel, grad_t, q: PrimitiveState, n, gas: GasModel) -> np.ndarray:
    nx, ny, nz = n
    mu = gas.viscosity(q.T)
    k = gas.conductivity(q.T)
    out = viscous_flux_arrays(grad_vel, grad_t, q.u, q.v, q.w, mu, k, nx, ny, nz)
    return np.array(out)


# ---------------------------------------------------------------------------
# Manufactured solutions
# ---------------------------------------------------------------------------

MMS_IDS = ("constant", "euler_2d", "ns_2d")

# Sinusoidal primitive fields over the unit square, subsonic everywhere.
_MMS_COEFFS = {
    "rho": (1.0, 0.15, 0.75, 0.10, 1.00),   # (base, ax, kx, ay, ky)
    "u": (70.0, 7.0, 1.00, 4.0, 1.25),
    "v": (90.0, 6.0, 1.25, 5.0, 0.75),
    "p": (1.0e5, 2.0e4, 1.00, 1.0e4, 0.75),
}


def _mms_symbolic_fields(ms_id):
    x, y = sp.symbols("x y", real=True)
    if ms_id == "constant":
        return x, y, {"rho": sp.Float(1.0), "u": sp.Float(50.0),
                      "v": sp.Float(-30.0), "w": sp.Float(0.0), "p": sp.Float(8.0e4)}
    c = _MMS_COEFFS
    fields = {
        "rho": c["rho"][0] + c["rho"][1] * sp.sin(c["rho"][2] * sp.pi * x)
               + c["rho"][3] * sp.cos(c["rho"][4] * sp.pi * y),
        "u": c["u"][0] + c["u"][1] * sp.cos(c["u"][2] * sp.pi * x)
             + c["u"][3] * sp.sin(c["u"][4] * sp.pi * y),
        "v": c["v"][0] + c["v"][1] * sp.sin(c["v"][2] * sp.pi * x)
             + c["v"][3] * sp.cos(c["v"][4] * sp.pi * y),
        "w": sp.Float(0.0),
        "p": c["p"][0] + c["p"][1] * sp.cos(c["p"][2] * sp.pi * x)
             + c["p"][3] * sp.sin(c["p"][4] * sp.pi * y),
    }
    return x, y, fields


def _lambdify_xyz(x, y, expr):
    f = sp.lambdify((x, y), expr, modules="numpy")

    def wrapped(xa, ya, za=None):
        xa = np.asarray(xa, float)
        out = f(xa, ya)
        return np.broadcast_to(np.asarray(out, float), xa.shape).copy()

    return wrapped


@lru_cache(maxsize=None)
def _mms_solution_cached(ms_id):
    if ms_id not in MMS_IDS:
        raise ValueError(f"unknown manufactured solution id {ms_id!r}")
    x, y, fields = _mms_symbolic_fields(ms_id)
    return {name: _lambdify_xyz(x, y, expr) for name, expr in fields.items()}


def manufactured_solution(ms_id):
    """Primitive-field callables {rho,u,v,w,p}(x, y, z) for a manufactured case."""
    return _mms_solution_cached(ms_id)


@lru_cache(maxsize=None)
def _mms_source_cached(ms_id, gamma, R, mu, prandtl):
    if ms_id not in MMS_IDS:
        raise ValueError(f"unknown manufactured solution id {ms_id!r}")
    x, y, f = _mms_symbolic_fields(ms_id)
    rho, u, v, p = f["rho"], f["u"], f["v"], f["p"]

    et = p / ((gamma - 1) * rho) + (u ** 2 + v ** 2) / 2
    ht = et + p / rho

    s_mass = sp.diff(rho * u, x) + sp.diff(rho * v, y)
    s_momx = sp.diff(rho * u * u + p, x) + sp.diff(rho * u * v, y)
    s_momy = sp.diff(rho * u * v, x) + sp.diff(rho * v * v + p, y)
    s_ener = sp.diff(rho * u * ht, x) + sp.diff(rho * v * ht, y)

    if ms_id == "ns_2d":
        T = p / (rho * R)
        k = mu * (gamma * R / (gamma - 1)) / prandtl
        div = sp.diff(u, x) + sp.diff(v, y)
        txx = 2 * mu * sp.diff(u, x) - sp.Rational(2, 3) * mu * div
        tyy = 2 * mu * sp.diff(v, y) - sp.Rational(2, 3) * mu * div
        txy = mu * (sp.diff(u, y) + sp.diff(v, x))
        s_momx -= sp.diff(txx, x) + sp.diff(txy, y)
        s_momy -= sp.diff(txy, x) + sp.diff(tyy, y)
        theta_x = u * txx + v * txy + k * sp.diff(T, x)
        theta_y = u * txy + v * tyy + k * sp.diff(T, y)
        s_ener -= sp.diff(theta_x, x) + sp.diff(theta_y, y)

    exprs = [sp.together(e.doit()) for e in (s_mass, s_momx, s_momy, sp.Float(0.0), s_ener)]
    return [_lambdify_xyz(x, y, e) for e in exprs]


def mms_source(x, y, z, ms_id, gas: GasModel):
    """Steady source terms S(x, y, z) making the manufactured field an exact solution.

    Returns the 5 source component arrays (mass, x/y/z-momentum, energy),
    evaluated at the given cell-center coordinates.
    """
    funcs = _mms_source_cached(ms_id, gas.gamma, gas.R, gas.mu, gas.prandtl)
    return tuple(fn(x, y, z) for fn in funcs)
