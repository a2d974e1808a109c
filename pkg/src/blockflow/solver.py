"""Per-block residual assembly (MUSCL + limiters + fluxes), boundary
enforcement, boundary-flux overwrite and explicit Runge-Kutta marching.

Ghost update pipeline per Runge-Kutta stage:

1. exchange round 1: connected face ghosts <- partner interior layers
2. physical BCs over each patch's own index ranges
3. exchange round 2 (viscous runs only): tangentially extended regions,
   delivering exact edge/corner ghosts sourced from fresh partner ghosts
4. physical BCs again over tangentially extended ranges

Every operation is vectorized slicing over whole-field storage addressed by
index ranges; face-sized temporaries are never routed through per-cell calls.
The pipeline, the boundary application order (canonical per block) and the
per-cell arithmetic are identical for serial and decomposed runs, which is
what makes them bitwise-comparable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import physics
from .errors import ConfigError, DivergenceError, NonPhysicalStateError
from .halo import copy_local
from .mesh import Block, BlockMetrics, compute_metrics
from .physics import GasModel

FLUXES = ("roe", "van_leer")
LIMITERS = ("none", "van_leer", "van_albada", "minmod")
RK_COEFFS = {1: (1.0,), 2: (0.5, 1.0), 4: (0.25, 1.0 / 3.0, 0.5, 1.0)}

EQ_NAMES = ("mass", "xmom", "ymom", "zmom", "energy")


@dataclass(frozen=True)
class SchemeConfig:
    flux: str = "van_leer"
    epsilon: float = 1.0
    kappa: float = -1.0
    limiter: str = "van_albada"
    rk_stages: int = 2
    cfl: float = 0.5
    limiter_freeze_at: int | None = None
    entropy_fix_coeff: float = 0.1
    viscous: bool = False
    mms_id: str | None = None
    wall_temperature: float | None = None

    def __post_init__(self):
        if self.flux not in FLUXES:
            raise ConfigError(f"flux must be one of {FLUXES}, got {self.flux!r}")
        if self.epsilon not in (0.0, 1.0, 0, 1):
            raise ConfigError(f"epsilon must be 0 or 1, got {self.epsilon}")
        if not -1.0 <= self.kappa <= 1.0:
            raise ConfigError(f"kappa must lie in [-1, 1], got {self.kappa}")
        if self.limiter not in LIMITERS:
            raise ConfigError(f"limiter must be one of {LIMITERS}, got {self.limiter!r}")
        if self.rk_stages not in RK_COEFFS:
            raise ConfigError(f"rk_stages must be 1, 2 or 4, got {self.rk_stages}")
        if self.cfl <= 0.0:
            raise ConfigError(f"cfl must be positive, got {self.cfl}")
        if self.limiter_freeze_at is not None and self.limiter_freeze_at < 1:
            raise ConfigError("limiter_freeze_at must be >= 1")

    @property
    def ghost_rounds(self) -> int:
        # Inviscid stencils never read edge/corner ghosts; one round suffices.
        return 2 if self.viscous else 1


@dataclass(frozen=True)
class FreestreamState:
    rho: float
    u: float
    v: float
    w: float
    p: float
    T: float

    @classmethod
    def from_mach(cls, gas: GasModel, mach, p, T, alpha_deg=0.0, ndim=2):
        """Freestream from Mach/pressure/temperature; the angle of attack
        pitches the velocity in the x-y plane (2D) or x-z plane (3D)."""
        rho = p / (gas.R * T)
        speed = mach * np.sqrt(gas.gamma * gas.R * T)
        a = np.radians(alpha_deg)
        if ndim == 2:
            vel = (speed * np.cos(a), speed * np.sin(a), 0.0)
        else:
            vel = (speed * np.cos(a), 0.0, speed * np.sin(a))
        return cls(rho, *vel, p, T)

    def values(self):
        return {"rho": self.rho, "u": self.u, "v": self.v, "w": self.w,
                "p": self.p, "T": self.T}


# ---------------------------------------------------------------------------
# Limiters
# ---------------------------------------------------------------------------

_VAN_ALBADA_EPS = 1e-12


def _psi_none(a, b):
    return np.ones_like(b)


def _psi_van_albada(a, b):
    return np.maximum(0.0, (2.0 * a * b + _VAN_ALBADA_EPS)
                      / (a * a + b * b + _VAN_ALBADA_EPS))


def _psi_minmod(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = a / b
    return np.where(a * b > 0.0, np.minimum(1.0, r), 0.0)


def _psi_van_leer(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = a / b
        val = 2.0 * r / (1.0 + r)
    return np.where(a * b > 0.0, val, 0.0)


LIMITER_FUNCS = {"none": _psi_none, "van_albada": _psi_van_albada,
                 "minmod": _psi_minmod, "van_leer": _psi_van_leer}


# ---------------------------------------------------------------------------
# Farfield characteristic state
# ---------------------------------------------------------------------------

def farfield_state(rho, u, v, w, p, fs: FreestreamState, nx, ny, nz, gas: GasModel):
    """1D Riemann-invariant treatment against the freestream.

    (nx, ny, nz) is the outward unit normal. Returns boundary primitive
    component arrays (rho, u, v, w, p)."""
    g = gas.gamma
    a_i = np.sqrt(g * p / rho)
    vn_i = u * nx + v * ny + w * nz
    a_f = np.sqrt(g * fs.p / fs.rho)
    vn_f = fs.u * nx + fs.v * ny + fs.w * nz

    r_out = vn_i + 2.0 * a_i / (g - 1.0)
    r_in = vn_f - 2.0 * a_f / (g - 1.0)
    vn_b = 0.5 * (r_out + r_in)
    a_b = 0.25 * (g - 1.0) * (r_out - r_in)

    outgoing = vn_b > 0.0
    s_b = np.where(outgoing, p / rho ** g, fs.p / fs.rho ** g)
    ut = np.where(outgoing, u - vn_i * nx, fs.u - vn_f * nx)
    vt = np.where(outgoing, v - vn_i * ny, fs.v - vn_f * ny)
    wt = np.where(outgoing, w - vn_i * nz, fs.w - vn_f * nz)

    rho_b = (a_b * a_b / (g * s_b)) ** (1.0 / (g - 1.0))
    p_b = rho_b * a_b * a_b / g

    # Supersonic overrides: no incoming information mixes.
    sup_out = vn_b >= a_b
    sup_in = vn_b <= -a_b
    rho_b = np.where(sup_out, rho, np.where(sup_in, fs.rho, rho_b))
    p_b = np.where(sup_out, p, np.where(sup_in, fs.p, p_b))
    u_b = np.where(sup_out, u, np.where(sup_in, fs.u, ut + vn_b * nx))
    v_b = np.where(sup_out, v, np.where(sup_in, fs.v, vt + vn_b * ny))
    w_b = np.where(sup_out, w, np.where(sup_in, fs.w, wt + vn_b * nz))
    return rho_b, u_b, v_b, w_b, p_b


# ---------------------------------------------------------------------------
# Block solver
# ---------------------------------------------------------------------------

class BlockSolver:
    """Flow state and residual machinery for one block.

    Fields are stored field-major: one Fortran-ordered padded array per scalar
    (rho, u, v, w, p, T plus the five conserved components). Limiter values
    live in persistent per-direction arrays so flux assembly reuses them and
    freezing can pin them.
    """

    PRIM_NAMES = ("rho", "u", "v", "w", "p")

    def __init__(self, block: Block, specs, gas: GasModel, config: SchemeConfig,
                 freestream: FreestreamState, metrics: BlockMetrics | None = None):
        self.block = block
        self.gas = gas
        self.config = config
        self.freestream = freestream
        self.metrics = metrics if metrics is not None else compute_metrics(block)
        self.specs = sorted((s for s in specs), key=lambda s: s.canonical_key())
        self.physical_specs = [s for s in self.specs if s.kind == "physical"]

        self.dirs = (0, 1) if block.ndim == 2 else (0, 1, 2)
        self.fields = {n: block.allocate_field() for n in
                       ("rho", "u", "v", "w", "p", "T")}
        self.q = [block.allocate_field() for _ in range(5)]
        self.psi = {}          # direction -> (psi_plus, psi_minus), each (5, ...)
        self.frozen = False

        self._int = block.interior()
        self._vol = self.metrics.volume[self._int]
        g = block.ghost

        # Unit normals / areas per direction over interior face planes with
        # padded tangential coverage (kept padded for BC use).
        self._nhat = {}
        self._area = {}
        for d in self.dirs:
            sv = self.metrics.face_vectors[d]
            area = np.sqrt(np.sum(sv * sv, axis=0))
            with np.errstate(invalid="ignore", divide="ignore"):
                nhat = np.where(area > 0.0, sv / area, 0.0)
            self._area[d] = area
            self._nhat[d] = nhat

        if config.viscous:
            self._grad_invT = {d: self._face_gradient_matrix(d) for d in self.dirs}

        self._mms_ghost_cache = {}
        self._source = None
        if config.mms_id is not None:
            c = self.metrics.centers
            x, y, z = (c[i][self._int] for i in range(3))
            src = physics.mms_source(x, y, z, config.mms_id, gas)
            self._source = [np.asarray(s) * self._vol for s in src]

    # -- small indexing helpers ------------------------------------------

    def _line(self, d, a, b):
        """Padded index range [a, b) along axis d, interior on other axes."""
        sl = list(self._int)
        sl[d] = slice(a, b)
        return tuple(sl)

    def _line_shift(self, d, a, b, e, off):
        """Like _line but with the tangential axis e shifted by off cells."""
        sl = list(self._int)
        sl[d] = slice(a, b)
        sl[e] = slice(sl[e].start + off, sl[e].stop + off)
        return tuple(sl)

    def _face_interior(self, d):
        """Slice of the padded-tangential face-vector arrays covering interior
        cells; drop the leading component entry for scalar face arrays."""
        g = self.block.ghost
        sl = [slice(g[a], g[a] + self.block.dims[a]) for a in range(3)]
        sl[d] = slice(None)
        return (slice(None), *sl)

    # -- initialization ----------------------------------------------------

    def init_uniform(self, state: FreestreamState | None = None):
        state = state or self.freestream
        for name, val in state.values().items():
            self.fields[name].fill(val)
        self.sync_conserved()

    def init_manufactured(self):
        sol = physics.manufactured_solution(self.config.mms_id)
        c = self.metrics.centers
        x, y, z = c[0], c[1], c[2]
        for name in self.PRIM_NAMES:
            self.fields[name][...] = sol[name](x, y, z)
        self.fields["T"][...] = self.fields["p"] / (self.fields["rho"] * self.gas.R)
        self.sync_conserved()

    def sync_conserved(self):
        q = physics.encode_primitive(*(self.fields[n] for n in self.PRIM_NAMES),
                                     self.gas.gamma)
        for dst, src in zip(self.q, q):
            dst[...] = src

    # -- ghost machinery ---------------------------------------------------

    def enforce_physical_bcs(self, extended=False):
        for spec in self.physical_specs:
            self._apply_bc(spec, extended)

    def _bc_slabs(self, spec, extended):
        """(ghost index, mirror-interior index) padded positions per depth and
        the tangential slice, honoring the extension flag."""
        g = self.block.ghost
        d = spec.axis
        n = self.block.dims[d]
        tang = []
        for a in range(3):
            if a == d:
                tang.append(None)
                continue
            lo, hi = spec.box[a]
            ext = g[a] if extended else 0
            tang.append(slice(g[a] + lo - ext, g[a] + hi + ext))
        layers = []
        for depth in range(self.block.ghost_depth):
            if spec.side == 0:
                layers.append((g[d] - 1 - depth, g[d] + depth))
            else:
                layers.append((g[d] + n + depth, g[d] + n - 1 - depth))
        return layers, tang

    def _slab_index(self, d, pos, tang):
        sl = list(tang)
        sl[d] = pos
        return tuple(sl)

    def _boundary_outward_normal(self, spec, tang):
        """Outward unit normal components on the boundary face plane."""
        d = spec.axis
        plane = 0 if spec.side == 0 else self.block.dims[d]
        sl = list(tang)
        sl[d] = plane
        nhat = self._nhat[d][(slice(None), *sl)]
        sign = -1.0 if spec.side == 0 else 1.0
        return sign * nhat[0], sign * nhat[1], sign * nhat[2]

    def _apply_bc(self, spec, extended):
        f = self.fields
        gas = self.gas
        layers, tang = self._bc_slabs(spec, extended)
        d = spec.axis

        if spec.bc_type == "supersonic_inflow":
            for gpos, _ in layers:
                idx = self._slab_index(d, gpos, tang)
                for name, val in self.freestream.values().items():
                    f[name][idx] = val
            return

        if spec.bc_type == "supersonic_outflow":
            src = self._slab_index(d, layers[0][1], tang)  # first interior layer
            vals = {n: f[n][src] for n in ("rho", "u", "v", "w", "p", "T")}
            for gpos, _ in layers:
                idx = self._slab_index(d, gpos, tang)
                for n, v in vals.items():
                    f[n][idx] = v
            return

        if spec.bc_type in ("slip_wall", "noslip_wall"):
            nx, ny, nz = self._boundary_outward_normal(spec, tang)
            for gpos, ipos in layers:
                gi = self._slab_index(d, gpos, tang)
                ii = self._slab_index(d, ipos, tang)
                u, v, w = f["u"][ii], f["v"][ii], f["w"][ii]
                if spec.bc_type == "slip_wall":
                    vn = u * nx + v * ny + w * nz
                    f["u"][gi] = u - 2.0 * vn * nx
                    f["v"][gi] = v - 2.0 * vn * ny
                    f["w"][gi] = w - 2.0 * vn * nz
                else:
                    f["u"][gi] = -u
                    f["v"][gi] = -v
                    f["w"][gi] = -w
                f["p"][gi] = f["p"][ii]
                tw = self.config.wall_temperature
                if spec.bc_type == "noslip_wall" and tw is not None:
                    f["T"][gi] = 2.0 * tw - f["T"][ii]
                else:
                    f["T"][gi] = f["T"][ii]
                f["rho"][gi] = f["p"][gi] / (gas.R * f["T"][gi])
            return

        if spec.bc_type == "farfield":
            nx, ny, nz = self._boundary_outward_normal(spec, tang)
            src = self._slab_index(d, layers[0][1], tang)
            rho_b, u_b, v_b, w_b, p_b = farfield_state(
                f["rho"][src], f["u"][src], f["v"][src], f["w"][src], f["p"][src],
                self.freestream, nx, ny, nz, gas)
            T_b = p_b / (rho_b * gas.R)
            for gpos, _ in layers:
                gi = self._slab_index(d, gpos, tang)
                f["rho"][gi] = rho_b
                f["u"][gi] = u_b
                f["v"][gi] = v_b
                f["w"][gi] = w_b
                f["p"][gi] = p_b
                f["T"][gi] = T_b
            return

        if spec.bc_type == "mms_dirichlet":
            key = (spec.canonical_key(), extended)
            if key not in self._mms_ghost_cache:
                sol = physics.manufactured_solution(self.config.mms_id)
                cached = []
                c = self.metrics.centers
                for gpos, _ in layers:
                    gi = self._slab_index(d, gpos, tang)
                    x, y, z = c[0][gi], c[1][gi], c[2][gi]
                    vals = {n: sol[n](x, y, z) for n in self.PRIM_NAMES}
                    vals["T"] = vals["p"] / (vals["rho"] * gas.R)
                    cached.append((gi, vals))
                self._mms_ghost_cache[key] = cached
            for gi, vals in self._mms_ghost_cache[key]:
                for n, v in vals.items():
                    f[n][gi] = v
            return

        raise ConfigError(f"unknown physical bc type {spec.bc_type!r}")

    def receive_local(self, src_solver, own_spec, src_spec, round_no):
        """Serve one local link direction by direct copy from src_solver."""
        copy_local(src_solver.fields, self.fields, own_spec, src_spec,
                   src_solver.block.dims, src_solver.block.ghost,
                   self.block.dims, self.block.ghost, round_no)

    # -- limiters and reconstruction --------------------------------------

    def compute_limiters(self):
        if self.frozen and self.psi:
            return
        for d in self.dirs:
            self.psi[d] = self._limiters_direction(d)

    def _limiters_direction(self, d):
        g = self.block.ghost[d]
        n = self.block.dims[d]
        func = LIMITER_FUNCS[self.config.limiter]
        pp, pm = [], []
        for name in self.PRIM_NAMES:
            w = self.fields[name]
            delta = w[self._line(d, g - 1, g + n + 2)] - w[self._line(d, g - 2, g + n + 1)]
            sl_hi = [slice(None)] * delta.ndim
            sl_lo = [slice(None)] * delta.ndim
            sl_hi[d] = slice(1, delta.shape[d])
            sl_lo[d] = slice(0, delta.shape[d] - 1)
            d_hi = delta[tuple(sl_hi)]       # face offsets 0 .. N+1
            d_lo = delta[tuple(sl_lo)]       # face offsets -1 .. N
            pp.append(func(d_hi, d_lo))      # psi+ at faces -1 .. N
            pm.append(func(d_lo, d_hi))      # psi- at faces  0 .. N+1
        return np.stack(pp), np.stack(pm)

    def _reconstruct(self, d):
        """MUSCL face states (qL, qR) for the 5 primitive variables at the
        N+1 interior face planes along direction d."""
        g = self.block.ghost[d]
        n = self.block.dims[d]
        eps = float(self.config.epsilon)
        kap = self.config.kappa
        pp, pm = self.psi[d]

        qL, qR = [], []
        for iv, name in enumerate(self.PRIM_NAMES):
            w = self.fields[name]
            wl = w[self._line(d, g - 1, g + n)]       # cells f-1
            wr = w[self._line(d, g, g + n + 1)]       # cells f
            if eps == 0.0:
                qL.append(wl.copy())
                qR.append(wr.copy())
                continue
            delta = w[self._line(d, g - 1, g + n + 2)] \
                - w[self._line(d, g - 2, g + n + 1)]  # faces -1 .. N+1

            def fslice(arr, a, b):
                sl = [slice(None)] * arr.ndim
                sl[d] = slice(a, b)
                return arr[tuple(sl)]

            d_m1 = fslice(delta, 0, n + 1)            # delta_{f-1}
            d_0 = fslice(delta, 1, n + 2)             # delta_f
            d_p1 = fslice(delta, 2, n + 3)            # delta_{f+1}
            ppv, pmv = pp[iv], pm[iv]
            quarter = eps / 4.0
            ql = wl + quarter * ((1.0 - kap) * fslice(ppv, 0, n + 1) * d_m1
                                 + (1.0 + kap) * fslice(pmv, 0, n + 1) * d_0)
            qr = wr - quarter * ((1.0 + kap) * fslice(ppv, 1, n + 2) * d_0
                                 + (1.0 - kap) * fslice(pmv, 1, n + 2) * d_p1)
            qL.append(ql)
            qR.append(qr)
        return qL, qR

    # -- residual ----------------------------------------------------------

    def assemble_residual(self, return_face_fluxes=False):
        """R = sum over faces of (F_inviscid - F_viscous) * area - S * volume,
        per interior cell; interior faces are computed once and shared."""
        R = [np.zeros(self.block.dims) for _ in range(5)]
        fluxes = {}
        for d in self.dirs:
            F = self._direction_flux(d)
            fluxes[d] = F
            for eq in range(5):
                lo = [slice(None)] * 3
                hi = [slice(None)] * 3
                lo[d] = slice(0, self.block.dims[d])
                hi[d] = slice(1, self.block.dims[d] + 1)
                R[eq] += F[eq][tuple(hi)] - F[eq][tuple(lo)]
        if self._source is not None:
            for eq in range(5):
                R[eq] -= self._source[eq]
        if return_face_fluxes:
            return R, fluxes
        return R

    def _direction_flux(self, d):
        qL, qR = self._reconstruct(d)
        for side, q in (("left", qL), ("right", qR)):
            if np.any(q[0] <= 0.0) or np.any(q[4] <= 0.0):
                bad = np.argwhere((np.asarray(q[0]) <= 0) | (np.asarray(q[4]) <= 0))[0]
                raise NonPhysicalStateError(
                    f"block {self.block.id}: non-physical {side} face state, "
                    f"direction {d}, face index {tuple(bad)}")

        fi = self._face_interior(d)
        nhat = self._nhat[d][fi]
        area = self._area[d][fi[1:]]
        nx, ny, nz = nhat[0], nhat[1], nhat[2]
        if self.config.flux == "roe":
            F = physics.roe_flux_arrays(tuple(qL), tuple(qR), nx, ny, nz,
                                        self.gas.gamma,
                                        self.config.entropy_fix_coeff)
        else:
            F = physics.van_leer_flux_arrays(tuple(qL), tuple(qR), nx, ny, nz,
                                             self.gas.gamma)
        F = [f * area for f in F]
        self._overwrite_boundary_fluxes(d, F)
        if self.config.viscous:
            Fv = self._viscous_flux(d)
            F = [f - fv for f, fv in zip(F, Fv)]
        return F

    def _overwrite_boundary_fluxes(self, d, F):
        """Replace wall and farfield face fluxes with boundary-consistent
        values (pressure-only walls, characteristic farfield)."""
        f = self.fields
        g = self.block.ghost
        for spec in self.physical_specs:
            if spec.axis != d or spec.bc_type not in ("slip_wall", "noslip_wall",
                                                      "farfield"):
                continue
            n = self.block.dims[d]
            plane = 0 if spec.side == 0 else n
            tang_flux = []   # tangential slices into interior-only flux arrays
            tang_pad = []    # same cells in padded field arrays
            for a in range(3):
                if a == d:
                    tang_flux.append(None)
                    tang_pad.append(None)
                    continue
                lo, hi = spec.box[a]
                tang_flux.append(slice(lo, hi))
                tang_pad.append(slice(g[a] + lo, g[a] + hi))
            fidx = list(tang_flux)
            fidx[d] = plane
            fidx = tuple(fidx)

            c1 = list(tang_pad)
            c2 = list(tang_pad)
            if spec.side == 0:
                c1[d], c2[d] = g[d], g[d] + 1
            else:
                c1[d], c2[d] = g[d] + n - 1, g[d] + n - 2
            c1, c2 = tuple(c1), tuple(c2)

            nsl = list(tang_pad)
            nsl[d] = plane
            nhat = self._nhat[d][(slice(None), *nsl)]
            area = self._area[d][tuple(nsl)]

            if spec.bc_type in ("slip_wall", "noslip_wall"):
                p_wall = 1.5 * f["p"][c1] - 0.5 * f["p"][c2]
                F[0][fidx] = 0.0
                F[1][fidx] = nhat[0] * p_wall * area
                F[2][fidx] = nhat[1] * p_wall * area
                F[3][fidx] = nhat[2] * p_wall * area
                F[4][fidx] = 0.0
            else:  # farfield
                sign = -1.0 if spec.side == 0 else 1.0
                qb = farfield_state(f["rho"][c1], f["u"][c1], f["v"][c1],
                                    f["w"][c1], f["p"][c1], self.freestream,
                                    sign * nhat[0], sign * nhat[1], sign * nhat[2],
                                    self.gas)
                Fb = physics.inviscid_flux_arrays(*qb, nhat[0], nhat[1], nhat[2],
                                                  self.gas.gamma)
                for eq in range(5):
                    F[eq][fidx] = Fb[eq] * area

    def _face_gradient_matrix(self, d):
        """Per-face inverse-transpose of the computational-to-physical
        coordinate matrix, used to turn index-space differences into physical
        gradients. Shape (3, 3, interior face lattice)."""
        blk = self.block
        g = blk.ghost
        n = blk.dims
        c = self.metrics.centers

        def cell_line(a, b):
            sl = list(self._int)
            sl[d] = slice(a, b)
            return (slice(None), *sl)

        t = {}
        t[d] = c[cell_line(g[d], g[d] + n[d] + 1)] - c[cell_line(g[d] - 1, g[d] + n[d])]

        x3 = blk.node_view_3()
        for e in self.dirs:
            if e == d:
                continue
            # Mid-edge differences across the face in the e direction.
            lo = [slice(g[a], g[a] + n[a]) for a in range(3)]  # node slices
            lo[d] = slice(g[d], g[d] + n[d] + 1)
            third = [a for a in self.dirs if a not in (d, e)]
            comps = []
            for comp in x3:
                hi_sl = list(lo)
                lo_sl = list(lo)
                hi_sl[e] = slice(lo[e].start + 1, lo[e].stop + 1)
                if third:
                    a = third[0]
                    mid_hi1 = comp[tuple(hi_sl)]
                    sl2 = list(hi_sl)
                    sl2[a] = slice(hi_sl[a].start + 1, hi_sl[a].stop + 1)
                    mid_hi = 0.5 * (mid_hi1 + comp[tuple(sl2)])
                    mid_lo1 = comp[tuple(lo_sl)]
                    sl3 = list(lo_sl)
                    sl3[a] = slice(lo_sl[a].start + 1, lo_sl[a].stop + 1)
                    mid_lo = 0.5 * (mid_lo1 + comp[tuple(sl3)])
                else:
                    mid_hi = comp[tuple(hi_sl)]
                    mid_lo = comp[tuple(lo_sl)]
                comps.append(mid_hi - mid_lo)
            while len(comps) < 3:
                comps.append(np.zeros_like(comps[0]))
            t[e] = np.stack(comps)

        shape = t[d].shape[1:]
        ndim = blk.ndim
        A = np.zeros((*shape, ndim, ndim))
        axes = list(self.dirs)
        for col, e in enumerate(axes):
            for row in range(ndim):
                A[..., row, col] = t[e][row]
        invT = np.linalg.inv(A).swapaxes(-1, -2)  # inv(A) transposed
        out = np.zeros((3, 3, *shape))
        for row in range(ndim):
            for col, e in enumerate(axes):
                out[row, e] = invT[..., row, col]
        return out

    def _viscous_flux(self, d):
        """Viscous normal flux * area at the interior face planes along d."""
        blk = self.block
        g = blk.ghost[d]
        n = blk.dims[d]
        grads_xi = {}   # computational-space derivative per field per axis
        names = ("u", "v", "w", "T")
        for name in names:
            w = self.fields[name]
            dn = {d: w[self._line(d, g, g + n + 1)] - w[self._line(d, g - 1, g + n)]}
            for e in self.dirs:
                if e == d:
                    continue
                wpl = w[self._line_shift(d, g - 1, g + n, e, +1)] \
                    + w[self._line_shift(d, g, g + n + 1, e, +1)]
                wmi = w[self._line_shift(d, g - 1, g + n, e, -1)] \
                    + w[self._line_shift(d, g, g + n + 1, e, -1)]
                dn[e] = 0.25 * (wpl - wmi)
            grads_xi[name] = dn

        invT = self._grad_invT[d]
        def phys_grad(name):
            out = []
            for row in range(3):
                acc = None
                for e in self.dirs:
                    term = invT[row, e] * grads_xi[name][e]
                    acc = term if acc is None else acc + term
                out.append(acc)
            return out

        gu, gv, gw, gt = (phys_grad(n_) for n_ in names)
        grad_vel = [gu, gv, gw]

        avg = {}
        for name in ("u", "v", "w", "T"):
            w = self.fields[name]
            avg[name] = 0.5 * (w[self._line(d, g - 1, g + n)]
                               + w[self._line(d, g, g + n + 1)])
        mu = self.gas.viscosity(avg["T"])
        k = self.gas.conductivity(avg["T"])

        fi = self._face_interior(d)
        nhat = self._nhat[d][fi]
        area = self._area[d][fi[1:]]
        Fv = physics.viscous_flux_arrays(grad_vel, gt, avg["u"], avg["v"],
                                         avg["w"], mu, k,
                                         nhat[0], nhat[1], nhat[2])
        return [f * area for f in Fv]

    # -- time stepping -----------------------------------------------------

    def local_time_step(self, cfl=None):
        """dt per interior cell: cfl * V / sum_faces (|V.n| + a) A, with a
        viscous spectral-radius augmentation for NS runs."""
        cfl = self.config.cfl if cfl is None else cfl
        f = self.fields
        rho = f["rho"][self._int]
        u, v, w = f["u"][self._int], f["v"][self._int], f["w"][self._int]
        a = np.sqrt(self.gas.gamma * f["p"][self._int] / rho)
        lam = np.zeros(self.block.dims)
        for d in self.dirs:
            fi = self._face_interior(d)
            nhat = self._nhat[d][fi]
            area = self._area[d][fi[1:]]
            for pick in (slice(0, self.block.dims[d]),
                         slice(1, self.block.dims[d] + 1)):
                sl = [slice(None)] * 3
                sl[d] = pick
                nx, ny, nz = (nhat[i][tuple(sl)] for i in range(3))
                ar = area[tuple(sl)]
                vn = np.abs(u * nx + v * ny + w * nz)
                lam += (vn + a) * ar
        if self.config.viscous:
            mu = self.gas.viscosity(f["T"][self._int])
            # Factor 2 on the usual spectral-radius bound keeps the explicit
            # diffusion limit satisfied at CFL up to ~1 on fine grids.
            coeff = 2.0 * max(4.0 / 3.0, self.gas.gamma / self.gas.prandtl)
            for d in self.dirs:
                fi = self._face_interior(d)
                area = self._area[d][fi[1:]]
                lo = [slice(None)] * 3
                hi = [slice(None)] * 3
                lo[d] = slice(0, self.block.dims[d])
                hi[d] = slice(1, self.block.dims[d] + 1)
                abar = 0.5 * (area[tuple(lo)] + area[tuple(hi)])
                lam += coeff * (mu / rho) * abar * abar / self._vol
        return cfl * self._vol / lam

    def snapshot_conserved(self):
        return [q[self._int].copy() for q in self.q]

    def apply_stage(self, q0, alpha, dt_over_vol, R):
        gamma = self.gas.gamma
        qn = [q0[eq] - alpha * dt_over_vol * R[eq] for eq in range(5)]
        rho, u, v, w, p = physics.decode_conserved(*qn, gamma)
        if np.any(rho <= 0.0) or np.any(p <= 0.0):
            bad = np.argwhere((rho <= 0.0) | (p <= 0.0))[0]
            raise NonPhysicalStateError(
                f"block {self.block.id}: non-physical update at cell "
                f"{tuple(bad)} (CFL {self.config.cfl} may be too high)")
        for eq in range(5):
            self.q[eq][self._int] = qn[eq]
        f = self.fields
        f["rho"][self._int] = rho
        f["u"][self._int] = u
        f["v"][self._int] = v
        f["w"][self._int] = w
        f["p"][self._int] = p
        f["T"][self._int] = p / (rho * self.gas.R)

    def residual_sumsq(self, R):
        return np.array([float(np.sum(r * r)) for r in R])


# ---------------------------------------------------------------------------
# Stepping driver
# ---------------------------------------------------------------------------

class RankStepper:
    """Runs the per-stage pipeline for one rank's blocks.

    exchange_fn(round_no) must fill the connected ghosts of every owned block
    for that round; the serial driver passes a local-copy loop, the
    distributed runtime passes the message engine.
    """

    def __init__(self, solvers: dict, exchange_fn, config: SchemeConfig):
        self.solvers = dict(sorted(solvers.items()))
        self.exchange_fn = exchange_fn
        self.config = config
        self.alphas = RK_COEFFS[config.rk_stages]

    def update_ghosts(self):
        self.exchange_fn(1)
        for s in self.solvers.values():
            s.enforce_physical_bcs(extended=False)
        if self.config.ghost_rounds == 2:
            self.exchange_fn(2)
            for s in self.solvers.values():
                s.enforce_physical_bcs(extended=True)

    def step(self, step_index):
        """One RK step; returns (sum of squared residuals per equation,
        interior cell count) from the first stage evaluation."""
        freeze = self.config.limiter_freeze_at
        frozen = freeze is not None and step_index > freeze
        for s in self.solvers.values():
            s.frozen = frozen

        snapshots = {}
        dtv = {}
        for cid, s in self.solvers.items():
            snapshots[cid] = s.snapshot_conserved()
            dtv[cid] = s.local_time_step() / s._vol

        sumsq = np.zeros(5)
        ncells = 0
        for k, alpha in enumerate(self.alphas):
            self.update_ghosts()
            residuals = {}
            for cid, s in self.solvers.items():
                s.compute_limiters()
                R = s.assemble_residual()
                residuals[cid] = R
                if k == 0:
                    sumsq += s.residual_sumsq(R)
                    ncells += s.block.cell_count()
            for cid, s in self.solvers.items():
                s.apply_stage(snapshots[cid], alpha, dtv[cid], residuals[cid])
        return sumsq, ncells


@dataclass
class IterationResult:
    solvers: dict
    history: np.ndarray          # (steps, 5) absolute residual L2 norms
    steps: int
    converged: bool

    def relative_history(self):
        base = self.history[0].copy()
        safe = np.where(base > 0.0, base, 1.0)
        rel = self.history / safe
        rel[:, base == 0.0] = 0.0
        return rel


def residual_norms(sumsq):
    return np.sqrt(np.asarray(sumsq))


def check_history_guards(history, step, residual_target, divergence_factor=1e6,
                         residual_floor=None):
    """Returns True when converged; raises DivergenceError on blow-up.

    Equations whose step-1 norm is negligible against the largest one (e.g.
    transverse momentum of an axis-aligned start, or z-momentum in 2D) carry
    no information and are excluded from both checks. residual_floor is an
    absolute cutoff: a state already at round-off (uniform freestream) counts
    as converged immediately."""
    if residual_floor is not None and float(np.max(history[step])) <= residual_floor:
        return True
    base = history[0]
    active = base > 1e-12 * np.max(base)
    if not np.any(active):
        return False
    rel = history[step][active] / base[active]
    if np.any(~np.isfinite(rel)) or np.max(rel) > divergence_factor:
        raise DivergenceError(
            f"residual grew by more than {divergence_factor:.0e} at step {step + 1}")
    return residual_target is not None and float(np.max(rel)) <= residual_target


def build_block_solvers(plan, gas, config, freestream, child_ids=None):
    """BlockSolvers for (a subset of) a plan's children."""
    out = {}
    for c in plan.children:
        if child_ids is not None and c.id not in child_ids:
            continue
        blk = plan.child_block(c.id)
        out[c.id] = BlockSolver(blk, plan.boundaries[c.id], gas, config, freestream)
    return out


def make_serial_exchange(plan, schedule, solvers):
    """Local-copy exchange over all schedule entries, in rank-major schedule
    order; round 2 packs every buffer before unpacking any (snapshot
    semantics, matching the distributed engine)."""
    from .halo import pack_face, unpack_face

    order = []
    for rank in sorted(schedule.per_rank):
        order.extend(schedule.per_rank[rank])

    def exchange(round_no):
        if round_no == 1:
            for e in order:
                dst = solvers[e.child]
                src = solvers[e.peer_child]
                src_spec = _peer_spec(plan, e)
                dst.receive_local(src, e.spec, src_spec, 1)
            return
        packed = []
        for e in order:
            src = solvers[e.peer_child]
            src_spec = _peer_spec(plan, e)
            bufs = pack_face(src.fields, src_spec, src.block.dims,
                             src.block.ghost, 2)
            packed.append((e, bufs, src_spec.side))
        for e, bufs, side in packed:
            dst = solvers[e.child]
            unpack_face(bufs, dst.fields, e.spec, dst.block.dims,
                        dst.block.ghost, side, 2)

    return exchange


def _peer_spec(plan, entry):
    for s in plan.boundaries[entry.peer_child]:
        if s.kind == "connected" and s.link_id == entry.spec.link_id and s is not entry.spec:
            return s
    # Self-connections list both endpoints on the same child; pick the other.
    for s in plan.boundaries[entry.peer_child]:
        if s.kind == "connected" and s.link_id == entry.spec.link_id:
            if s.face != entry.spec.face or s.box != entry.spec.box:
                return s
    raise KeyError(f"no peer spec for link {entry.spec.link_id}")


def iterate(plan, schedule, gas, config, freestream, max_steps,
            residual_target=None, init="uniform", residual_floor=None):
    """Serial multi-block iteration over a decomposition plan (all children in
    one process; connected ghosts served by direct copies)."""
    solvers = build_block_solvers(plan, gas, config, freestream)
    for s in solvers.values():
        if init == "manufactured":
            s.init_manufactured()
        else:
            s.init_uniform()
    stepper = RankStepper(solvers, make_serial_exchange(plan, schedule, solvers),
                          config)
    history = []
    converged = False
    for step in range(max_steps):
        sumsq, _ = stepper.step(step + 1)
        history.append(residual_norms(sumsq))
        if check_history_guards(history, step, residual_target,
                                residual_floor=residual_floor):
            converged = True
            break
    return IterationResult(solvers=solvers, history=np.array(history),
                           steps=len(history), converged=converged)


def write_residual_csv(result: IterationResult, path):
    rel = result.relative_history()
    with open(path, "w") as f:
        f.write("step,r_mass,r_xmom,r_ymom,r_zmom,r_energy\n")
        for i, row in enumerate(rel):
            cols = ",".join(f"{v:.16e}" for v in row)
            f.write(f"{i + 1},{cols}\n")
