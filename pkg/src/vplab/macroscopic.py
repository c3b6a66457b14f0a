"""Macroscopic projection, moments, Poisson field solve, residual monitors.

Fields carry shapes (2, nx, n) for two-species phase-space data, (nx,) for
spatial scalars. The projection uses the discretely orthonormalized null
basis, so the split f = Pf + (I-P)f is idempotent at machine precision;
the reported coefficients a_pm, b, c use the stated inner-product formulas
on the discrete quadrature.
"""

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class MacroState:
    """Macroscopic coefficients and high-order moments per spatial point."""
    a_plus: np.ndarray
    a_minus: np.ndarray
    b: np.ndarray            # (3, nx)
    c: np.ndarray
    theta: np.ndarray        # (2, 3, 3, nx): Theta_jk((I-P)f_s)
    lam: np.ndarray          # (2, 3, nx):    Lambda_j((I-P)f_s)
    G: np.ndarray            # (3, nx)


@dataclass
class FieldState:
    """Electric potential/field and charge density on the torus."""
    phi: np.ndarray          # (nx,)
    E: np.ndarray            # (3, nx); only the first axis is active in 1D
    rho: np.ndarray          # (nx,)
    mean_rho: float = 0.0


class MacroProjector:
    """L^2_v-orthogonal projection onto the six collision invariants."""

    def __init__(self, grid, maxw):
        self.grid = grid
        self.maxw = maxw
        raw = self._raw_basis()
        out = []
        for vec in raw:
            w = vec.copy()
            for u in out:
                w -= np.sum(u * w) * grid.wv * u
            w /= np.sqrt(np.sum(w * w) * grid.wv)
            out.append(w)
        self.basis = np.stack(out)                 # (6, 2, n)

    def _raw_basis(self):
        smu = self.maxw.sqrt_mu
        v = self.grid.v
        vsq = self.grid.vsq
        zero = np.zeros_like(smu)
        return np.stack([
            np.stack([smu, zero]),
            np.stack([zero, smu]),
            np.stack([v[0] * smu, v[0] * smu]),
            np.stack([v[1] * smu, v[1] * smu]),
            np.stack([v[2] * smu, v[2] * smu]),
            np.stack([vsq * smu, vsq * smu]),
        ]).astype(float)

    def split(self, f):
        """Return (Pf, (I-P)f) for f of shape (2, ..., n)."""
        f = np.asarray(f)
        coef = np.tensordot(self.basis, f, axes=([1, 2], [0, -1])) * self.grid.wv
        if f.ndim == 2:
            Pf = np.tensordot(coef, self.basis, axes=(0, 0))
        else:
            Pf = np.moveaxis(np.tensordot(coef, self.basis, axes=(0, 0)), [-2, -1], [0, -1])
        return Pf, f - Pf

    def coefficients(self, f):
        """Stated inner-product formulas for a_pm, b, c on the discrete grid."""
        grid, smu = self.grid, self.maxw.sqrt_mu
        v, vsq = grid.v, grid.vsq
        def mom(zeta, fs):
            return np.tensordot(fs, zeta, axes=(-1, 0)) * grid.wv
        a_plus = mom(smu, f[0])
        a_minus = mom(smu, f[1])
        fsum = f[0] + f[1]
        b = np.stack([0.5 * mom(v[j] * smu, fsum) for j in range(3)])
        c = mom((vsq - 3.0) * smu, fsum) / 12.0
        return a_plus, a_minus, b, c


def project_P(f, grid, maxw, projector=None):
    """Split f into (MacroState, Pf, (I-P)f).

    The macroscopic coefficients follow the stated inner products; the split
    itself uses the orthonormalized basis (idempotent at grid level).
    """
    if projector is None:
        projector = MacroProjector(grid, maxw)
    f = np.asarray(f)
    Pf, IPf = projector.split(f)
    a_plus, a_minus, b, c = projector.coefficients(f)
    th = theta_moments(IPf, grid, maxw)
    la = lambda_moments(IPf, grid, maxw)
    G = momentum_flux_difference(IPf, grid, maxw)
    state = MacroState(a_plus=a_plus, a_minus=a_minus, b=b, c=c,
                       theta=th, lam=la, G=G)
    return state, Pf, IPf


def theta_moments(X, grid, maxw):
    """Theta_jk(X_s) = ((v_j v_k - 1) sqrt_mu, X_s) for all j, k."""
    v, smu, wv = grid.v, maxw.sqrt_mu, grid.wv
    out = np.empty((2, 3, 3) + X.shape[1:-1])
    for j in range(3):
        for k in range(3):
            zeta = (v[j] * v[k] - 1.0) * smu
            out[:, j, k] = np.tensordot(X, zeta, axes=(-1, 0)) * wv
    return out


def lambda_moments(X, grid, maxw):
    """Lambda_j(X_s) = (1/10)((|v|^2 - 5) v_j sqrt_mu, X_s)."""
    v, vsq, smu, wv = grid.v, grid.vsq, maxw.sqrt_mu, grid.wv
    out = np.empty((2, 3) + X.shape[1:-1])
    for j in range(3):
        zeta = 0.1 * (vsq - 5.0) * v[j] * smu
        out[:, j] = np.tensordot(X, zeta, axes=(-1, 0)) * wv
    return out


def momentum_flux_difference(IPf, grid, maxw):
    """G_j = (v_j sqrt_mu, (I-P)f . (1, -1))."""
    v, smu, wv = grid.v, maxw.sqrt_mu, grid.wv
    diff = IPf[0] - IPf[1]
    return np.stack([
        np.tensordot(diff, v[j] * smu, axes=(-1, 0)) * wv for j in range(3)
    ])


def solve_poisson(rho, grid, mean_tol=1e-10):
    """Spectral solve of -Lap phi = rho on the torus, zero-mean phi, E = -grad phi.

    The zero mode of rho is removed (required for solvability); its size is
    reported in FieldState.mean_rho and a warning is emitted if it exceeds
    mean_tol relative to the density scale.
    """
    rho = np.asarray(rho, dtype=float)
    rh = np.fft.rfft(rho)
    mean_rho = rh[0].real / grid.nx
    scale = np.abs(rho).max() if np.abs(rho).max() > 0 else 1.0
    if abs(mean_rho) > mean_tol * scale:
        warnings.warn(
            f"poisson: removing nonzero charge mean {mean_rho:.3e}", RuntimeWarning
        )
    rh[0] = 0.0
    k = grid.kx_r
    ph = np.zeros_like(rh)
    ph[1:] = rh[1:] / k[1:] ** 2
    phi = np.fft.irfft(ph, n=grid.nx)
    E1 = np.fft.irfft(-1j * k * ph, n=grid.nx)
    E = np.zeros((3, grid.nx))
    E[0] = E1
    return FieldState(phi=phi, E=E, rho=rho, mean_rho=float(mean_rho))


def div_E_residual(fs, grid):
    """Relative spectral residual of div E = rho (zero mode excluded)."""
    divE = grid.ddx(fs.E[0])
    rho0 = fs.rho - fs.rho.mean()
    denom = np.linalg.norm(rho0)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(divE - rho0) / denom)


def _moment_pack(f, grid, maxw, projector, apply_L, forcing):
    """All per-snapshot ingredients the residual lines need."""
    v, smu, wv = grid.v, maxw.sqrt_mu, grid.wv
    state, Pf, IPf = project_P(f, grid, maxw, projector)
    fs = solve_poisson(state.a_plus - state.a_minus, grid)
    Lf = apply_L(f)
    g = forcing(f, fs)
    dxf = grid.ddx(IPf, axis=-2)
    transport = -v[0] * dxf          # -v.grad_x (I-P)f, one spatial axis
    h = transport + Lf
    def vmom(zeta, X):
        return np.tensordot(X, zeta, axes=(-1, 0)) * wv
    m = np.stack([np.stack([vmom(v[j] * smu, IPf[s]) for j in range(3)])
                  for s in range(2)])                       # (2, 3, nx)
    pack = {
        "state": state, "field": fs, "Lf": Lf, "g": g, "h": h,
        "m": m,
        "theta_g": theta_moments(g, grid, maxw),
        "theta_h": theta_moments(h, grid, maxw),
        "lam_g": lambda_moments(g, grid, maxw),
        "lam_h": lambda_moments(h, grid, maxw),
        "smu_g": np.stack([vmom(smu, g[s]) for s in range(2)]),
        "smu_L": np.stack([vmom(smu, Lf[s]) for s in range(2)]),
        "vj_Lg": np.stack([np.stack([vmom(v[j] * smu, (Lf + g)[s]) for j in range(3)])
                           for s in range(2)]),
        "en_Lg": np.stack([vmom((grid.vsq - 3.0) * smu, (Lf + g)[s]) for s in range(2)]),
        "ipf_en": np.stack([vmom((grid.vsq - 3.0) * smu, IPf[s]) for s in range(2)]),
        "trans_vj": np.stack([np.stack([vmom(v[j] * smu, v[0] * dxf[s]) for j in range(3)])
                              for s in range(2)]),
        "trans_en": np.stack([vmom((grid.vsq - 3.0) * smu, v[0] * dxf[s]) for s in range(2)]),
    }
    return pack


def moment_residuals(snapshots, dt, grid, maxw, apply_L, forcing, projector=None):
    """Discrete residuals of the moment evolution systems along a trajectory.

    Parameters
    ----------
    snapshots : list of (t, f) with f shaped (2, nx, n) at uniform spacing dt
    apply_L : callable f -> Lf
    forcing : callable (f, FieldState) -> g, the nonlinear forcing as the
        time stepper discretizes it (zeroed parts excluded).

    Returns a list of records {"equation_id", "t", "max_residual",
    "l2_residual"}, one per equation line per interior snapshot, plus the
    continuity check d/dt(a_+ - a_-) + div G.
    """
    if len(snapshots) < 3:
        raise ValueError("moment residuals need at least 3 consecutive snapshots")
    if projector is None:
        projector = MacroProjector(grid, maxw)
    packs = [_moment_pack(f, grid, maxw, projector, apply_L, forcing)
             for _, f in snapshots]
    times = [t for t, _ in snapshots]
    ddx = grid.ddx
    records = []

    def emit(eq, t, r):
        records.append({
            "equation_id": eq,
            "t": float(t),
            "max_residual": float(np.abs(r).max()),
            "l2_residual": float(np.sqrt(np.mean(np.abs(r) ** 2))),
        })

    sgn = (1.0, -1.0)
    for k in range(1, len(snapshots) - 1):
        t = times[k]
        pm, p0, pp = packs[k - 1], packs[k], packs[k + 1]
        def dt_of(extract):
            return (extract(pp) - extract(pm)) / (2.0 * dt)
        st = p0["state"]
        E1 = p0["field"].E[0]
        a = (st.a_plus, st.a_minus)
        for s in range(2):
            tag = "p" if s == 0 else "m"
            # mass
            r = dt_of(lambda q, s=s: (q["state"].a_plus, q["state"].a_minus)[s]) \
                + ddx(st.b[0]) + ddx(p0["m"][s, 0])
            emit(f"s17_mass_{tag}", t, r)
            # momentum
            for j in range(3):
                r = dt_of(lambda q, s=s, j=j: q["state"].b[j] + q["m"][s, j]) \
                    + (ddx(a[s] + 2.0 * st.c) if j == 0 else 0.0) \
                    - sgn[s] * (E1 if j == 0 else 0.0) \
                    + p0["trans_vj"][s, j] - p0["vj_Lg"][s, j]
                emit(f"s17_momentum_{tag}{j+1}", t, r)
            # energy
            r = dt_of(lambda q, s=s: q["state"].c + q["ipf_en"][s] / 6.0) \
                + ddx(st.b[0]) / 3.0 + p0["trans_en"][s] / 6.0 - p0["en_Lg"][s] / 6.0
            emit(f"s17_energy_{tag}", t, r)
            # Theta diagonal
            for j in range(3):
                r = dt_of(lambda q, s=s, j=j: q["state"].theta[s, j, j] + 2.0 * q["state"].c) \
                    + 2.0 * (ddx(st.b[j]) if j == 0 else 0.0) \
                    - p0["theta_g"][s, j, j] - p0["theta_h"][s, j, j]
                emit(f"s17_theta_{tag}{j+1}{j+1}", t, r)
            # Theta off-diagonal
            for j in range(3):
                for kk in range(j + 1, 3):
                    r = dt_of(lambda q, s=s, j=j, kk=kk: q["state"].theta[s, j, kk]) \
                        + (ddx(st.b[kk]) if j == 0 else 0.0) \
                        + (ddx(st.b[j]) if kk == 0 else 0.0) \
                        + ddx(p0["m"][s, 0]) \
                        - p0["theta_g"][s, j, kk] - p0["theta_h"][s, j, kk] \
                        - p0["smu_g"][s] - p0["smu_L"][s]
                    emit(f"s17_theta_{tag}{j+1}{kk+1}", t, r)
            # Lambda
            for j in range(3):
                r = dt_of(lambda q, s=s, j=j: q["state"].lam[s, j]) \
                    + (ddx(st.c) if j == 0 else 0.0) \
                    - p0["lam_g"][s, j] - p0["lam_h"][s, j]
                emit(f"s17_lambda_{tag}{j+1}", t, r)

        # (19): species means
        r = dt_of(lambda q: 0.5 * (q["state"].a_plus + q["state"].a_minus)) + ddx(st.b[0])
        emit("s19_mass", t, r)
        th_sum = p0["state"].theta[0] + p0["state"].theta[1]
        th_sum_gh = (p0["theta_g"] + p0["theta_h"]).sum(axis=0)
        lam_sum_gh = (p0["lam_g"] + p0["lam_h"]).sum(axis=0)
        vg_sum = np.stack([
            np.tensordot(p0["g"][0] + p0["g"][1], grid.v[j] * maxw.sqrt_mu, axes=(-1, 0)) * grid.wv
            for j in range(3)])
        eg_sum = np.tensordot(p0["g"][0] + p0["g"][1], (grid.vsq - 3.0) * maxw.sqrt_mu,
                              axes=(-1, 0)) * grid.wv
        for j in range(3):
            r = dt_of(lambda q, j=j: q["state"].b[j]) \
                + (ddx(0.5 * (st.a_plus + st.a_minus) + 2.0 * st.c) if j == 0 else 0.0) \
                + 0.5 * ddx(th_sum[j, 0]) - 0.5 * vg_sum[j]
            emit(f"s19_momentum_{j+1}", t, r)
        lam_sum = p0["state"].lam[0] + p0["state"].lam[1]
        r = dt_of(lambda q: q["state"].c) + ddx(st.b[0]) / 3.0 \
            + (5.0 / 6.0) * ddx(lam_sum[0]) - eg_sum / 12.0
        emit("s19_energy", t, r)
        for j in range(3):
            for kk in range(j, 3):
                r = dt_of(lambda q, j=j, kk=kk:
                          0.5 * (q["state"].theta[0, j, kk] + q["state"].theta[1, j, kk])
                          + (2.0 * q["state"].c if j == kk else 0.0)) \
                    + (ddx(st.b[kk]) if j == 0 else 0.0) \
                    + (ddx(st.b[j]) if kk == 0 else 0.0) \
                    - 0.5 * th_sum_gh[j, kk]
                emit(f"s19_theta_{j+1}{kk+1}", t, r)
        for j in range(3):
            r = 0.5 * dt_of(lambda q, j=j: q["state"].lam[0, j] + q["state"].lam[1, j]) \
                + (ddx(st.c) if j == 0 else 0.0) - 0.5 * lam_sum_gh[j]
            emit(f"s19_lambda_{j+1}", t, r)

        # (21): species differences / field dissipation
        r = dt_of(lambda q: q["state"].a_plus - q["state"].a_minus) + ddx(st.G[0])
        emit("s21_continuity", t, r)
        th_diff = p0["state"].theta[0] - p0["state"].theta[1]
        vLg_diff = p0["vj_Lg"][0] - p0["vj_Lg"][1]
        for j in range(3):
            r = dt_of(lambda q, j=j: q["state"].G[j]) \
                + (ddx(st.a_plus - st.a_minus) if j == 0 else 0.0) \
                - 2.0 * (E1 if j == 0 else 0.0) \
                + ddx(th_diff[j, 0]) - vLg_diff[j]
            emit(f"s21_field_{j+1}", t, r)
    return records
