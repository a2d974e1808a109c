"""Independent reference implementations used only to check the main code.

Everything here is deliberately written from published formulas or by brute
force, without importing the corresponding blockflow internals, so that the
checks stay independent of the paths they verify.
"""

import numpy as np


# ---------------------------------------------------------------------------
# Exact Riemann solver (ideal gas), Toro-style, sampled at x/t = 0
# ---------------------------------------------------------------------------

def exact_riemann_interface_state(left, right, gamma, tol=1e-12, max_iter=100):
    """Solve the 1D Riemann problem and sample the state on the interface.

    left, right : (rho, u, p) tuples
    Returns (rho, u, p) at x/t = 0.
    """
    rl, ul, pl = left
    rr, ur, pr = right
    al = np.sqrt(gamma * pl / rl)
    ar = np.sqrt(gamma * pr / rr)
    g1 = (gamma - 1.0) / (2.0 * gamma)
    g2 = (gamma + 1.0) / (2.0 * gamma)
    g3 = 2.0 / (gamma - 1.0)
    g4 = 2.0 / (gamma + 1.0)
    g5 = (gamma - 1.0) / (gamma + 1.0)
    g7 = (gamma - 1.0) / 2.0

    def f_side(p, rho_k, p_k, a_k):
        if p > p_k:  # shock
            A = g4 / rho_k
            B = g5 * p_k
            f = (p - p_k) * np.sqrt(A / (p + B))
            df = np.sqrt(A / (B + p)) * (1.0 - 0.5 * (p - p_k) / (B + p))
        else:  # rarefaction
            f = g3 * a_k * ((p / p_k) ** g1 - 1.0)
            df = (1.0 / (rho_k * a_k)) * (p / p_k) ** (-g2)
        return f, df

    # Two-rarefaction initial guess, floored away from vacuum.
    p_guess = ((al + ar - g7 * (ur - ul)) / (al / pl ** g1 + ar / pr ** g1)) ** (1.0 / g1)
    p = max(p_guess, 1e-8 * min(pl, pr))
    for _ in range(max_iter):
        fl, dfl = f_side(p, rl, pl, al)
        fr, dfr = f_side(p, rr, pr, ar)
        change = (fl + fr + (ur - ul)) / (dfl + dfr)
        p_new = p - change
        if p_new <= 0.0:
            p_new = 0.5 * p
        if abs(p_new - p) < tol * max(1.0, p_new):
            p = p_new
            break
        p = p_new
    pstar = p
    fl, _ = f_side(pstar, rl, pl, al)
    fr, _ = f_side(pstar, rr, pr, ar)
    ustar = 0.5 * (ul + ur) + 0.5 * (fr - fl)

    s = 0.0  # sample location x/t
    if s <= ustar:  # left of contact
        if pstar > pl:  # left shock
            sl = ul - al * np.sqrt(g2 * pstar / pl + g1)
            if s <= sl:
                return rl, ul, pl
            rho = rl * ((pstar / pl + g5) / (g5 * pstar / pl + 1.0))
            return rho, ustar, pstar
        # left rarefaction
        shl = ul - al
        astar = al * (pstar / pl) ** g1
        stl = ustar - astar
        if s <= shl:
            return rl, ul, pl
        if s >= stl:
            rho = rl * (pstar / pl) ** (1.0 / gamma)
            return rho, ustar, pstar
        u = g4 * (al + g7 * ul + s)
        a = g4 * (al + g7 * (ul - s))
        rho = rl * (a / al) ** g3
        p_fan = pl * (a / al) ** (2.0 * gamma / (gamma - 1.0))
        return rho, u, p_fan
    # right of contact
    if pstar > pr:  # right shock
        sr = ur + ar * np.sqrt(g2 * pstar / pr + g1)
        if s >= sr:
            return rr, ur, pr
        rho = rr * ((pstar / pr + g5) / (g5 * pstar / pr + 1.0))
        return rho, ustar, pstar
    # right rarefaction
    shr = ur + ar
    astar = ar * (pstar / pr) ** g1
    str_ = ustar + astar
    if s >= shr:
        return rr, ur, pr
    if s <= str_:
        rho = rr * (pstar / pr) ** (1.0 / gamma)
        return rho, ustar, pstar
    u = g4 * (-ar + g7 * ur + s)
    a = g4 * (ar - g7 * (ur - s))
    rho = rr * (a / ar) ** g3
    p_fan = pr * (a / ar) ** (2.0 * gamma / (gamma - 1.0))
    return rho, u, p_fan


def euler_flux_x(rho, u, p, gamma):
    """1D Euler flux of a state, x-direction."""
    et = p / ((gamma - 1.0) * rho) + 0.5 * u * u
    return np.array([rho * u, rho * u * u + p, u * (rho * et + p)])


# ---------------------------------------------------------------------------
# Van Leer flux vector splitting, written independently (scalar, one normal)
# ---------------------------------------------------------------------------

def van_leer_reference(ql, qr, n, gamma):
    """Classic Van Leer FVS from the published split-mass/momentum/energy formulas.

    ql, qr : (rho, u, v, w, p)
    n      : unit normal (nx, ny, nz)
    """
    nx, ny, nz = n

    def full_flux(q):
        rho, u, v, w, p = q
        vn = u * nx + v * ny + w * nz
        ht = gamma / (gamma - 1.0) * p / rho + 0.5 * (u * u + v * v + w * w)
        return np.array([rho * vn,
                         rho * u * vn + nx * p,
                         rho * v * vn + ny * p,
                         rho * w * vn + nz * p,
                         rho * ht * vn])

    def split(q, sgn):
        rho, u, v, w, p = q
        a = np.sqrt(gamma * p / rho)
        vn = u * nx + v * ny + w * nz
        m = vn / a
        if sgn * m >= 1.0:
            return full_flux(q)
        if sgn * m <= -1.0:
            return np.zeros(5)
        fmass = sgn * rho * a * (m + sgn) ** 2 / 4.0
        ubar = u + nx * (-vn + sgn * 2.0 * a) / gamma
        vbar = v + ny * (-vn + sgn * 2.0 * a) / gamma
        wbar = w + nz * (-vn + sgn * 2.0 * a) / gamma
        energy = (((gamma - 1.0) * vn + sgn * 2.0 * a) ** 2 / (2.0 * (gamma ** 2 - 1.0))
                  + 0.5 * (u * u + v * v + w * w) - 0.5 * vn * vn)
        return np.array([fmass, fmass * ubar, fmass * vbar, fmass * wbar, fmass * energy])

    return split(ql, +1.0) + split(qr, -1.0)


# ---------------------------------------------------------------------------
# Viscous stress/work, assembled through explicit tensor algebra
# ---------------------------------------------------------------------------

def viscous_flux_reference(grad_vel, grad_t, vel, mu, k, n):
    """Normal viscous flux via full tensor assembly (Stokes hypothesis)."""
    G = np.asarray(grad_vel, float)          # G[i, j] = d(vel_i)/d(x_j)
    n = np.asarray(n, float)
    vel = np.asarray(vel, float)
    tau = mu * (G + G.T) - (2.0 / 3.0) * mu * np.trace(G) * np.eye(3)
    theta = tau @ vel + k * np.asarray(grad_t, float)
    mom = tau @ n
    return np.array([0.0, mom[0], mom[1], mom[2], theta @ n])


# ---------------------------------------------------------------------------
# Cell volume via divergence theorem and Gauss quadrature on triangle faces
# ---------------------------------------------------------------------------

_HEX_FACES = (  # corner indices (i,j,k each 0/1) per face, outward ordering
    ((0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)),  # i-min
    ((1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)),  # i-max
    ((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)),  # j-min
    ((0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)),  # j-max
    ((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)),  # k-min
    ((0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)),  # k-max
)

# Degree-5 symmetric triangle rule (7 points), exact for the cubics met here.
_TRI_W = np.array([0.225,
                   0.13239415278850616, 0.13239415278850616, 0.13239415278850616,
                   0.12593918054482717, 0.12593918054482717, 0.12593918054482717])
_TRI_B = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [0.05971587178976981, 0.47014206410511505, 0.47014206410511505],
    [0.47014206410511505, 0.05971587178976981, 0.47014206410511505],
    [0.47014206410511505, 0.47014206410511505, 0.05971587178976981],
    [0.7974269853530872, 0.10128650732345636, 0.10128650732345636],
    [0.10128650732345636, 0.7974269853530872, 0.10128650732345636],
    [0.10128650732345636, 0.10128650732345636, 0.7974269853530872],
])


def _tri_flux_of_x_over_3(p0, p1, p2):
    """Integral of (x/3) . n dA over a flat triangle via quadrature."""
    area_vec = 0.5 * np.cross(p1 - p0, p2 - p0)
    pts = (_TRI_B[:, 0:1] * p0 + _TRI_B[:, 1:2] * p1 + _TRI_B[:, 2:3] * p2)
    vals = pts @ area_vec / 3.0
    return float(np.sum(_TRI_W * vals))


def hex_volume_quadrature(corners):
    """Volume of a hexahedron with triangulated quad faces (consistent diagonals).

    corners : array indexable as corners[i][j][k] -> 3-vector, i/j/k in {0,1}.
    Faces split along the (first corner -> third corner) diagonal, matching
    the convention documented for the main metric code.
    """
    vol = 0.0
    for face in _HEX_FACES:
        p = [np.asarray(corners[a][b][c], float) for a, b, c in face]
        vol += _tri_flux_of_x_over_3(p[0], p[1], p[2])
        vol += _tri_flux_of_x_over_3(p[0], p[2], p[3])
    return vol


# ---------------------------------------------------------------------------
# Misc small oracles
# ---------------------------------------------------------------------------

def rk2_reference(q0, rhs, dt, alphas=(0.5, 1.0)):
    """Explicit multi-stage update q_k = q0 - alpha_k dt rhs(q_{k-1})."""
    q = np.asarray(q0, float)
    qk = q.copy()
    for a in alphas:
        qk = q - a * dt * rhs(qk)
    return qk


def contiguous_runs_bruteforce(shape_tot, box):
    """Count maximal contiguous address runs of a sub-box in an i-fastest layout.

    shape_tot : padded array extents (ni, nj, nk)
    box       : ((i0, i1), (j0, j1), (k0, k1)) half-open index ranges into the
                padded array (already offset, i.e. non-negative).
    Enumerates flat addresses and counts breaks; intentionally naive.
    """
    ni, nj, nk = shape_tot
    (i0, i1), (j0, j1), (k0, k1) = box
    addrs = sorted((i + j * ni + k * ni * nj)
                   for k in range(k0, k1) for j in range(j0, j1) for i in range(i0, i1))
    if not addrs:
        return 0
    runs = 1
    for a, b in zip(addrs, addrs[1:]):
        if b != a + 1:
            runs += 1
    return runs
