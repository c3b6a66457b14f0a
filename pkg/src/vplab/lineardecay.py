"""Per-frequency analysis of the homogeneous linearized system.

The two-species mode operator at spatial frequency y block-diagonalizes in
species sum/difference coordinates: the sum sector sees A + 2K, the
difference sector sees A plus the rank-one Poisson coupling. The recorded
mode functional is E_l(t, y) = |w^l f_hat|^2_{L2_v} + |E_hat|^2, which for
l = 0 decreases exactly along the flow; implicit-midpoint stepping
preserves that decrease to roundoff.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


_SQ2 = np.sqrt(2.0)


class ModeOperator:
    """Dense sector operators for d/dt u = B(y) u at one spatial frequency.

    y is a 3-vector with (by convention) only the first axis nonzero; the
    Poisson coupling uses phi_hat = |y|^{-2} (sqrt_mu, u_+ - u_-) for y != 0
    and vanishes at y = 0, where B reduces to L.
    """

    def __init__(self, y, assembly, with_field=True):
        self.asm = assembly
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.size == 1:
            y = np.array([float(y[0]), 0.0, 0.0])
        self.y = y
        self.ynorm = float(np.linalg.norm(y))
        grid = assembly.grid
        Ls, Ld = assembly.dense_sectors()
        vy = grid.v[0] * y[0] + grid.v[1] * y[1] + grid.v[2] * y[2]
        self.vy = vy
        self.Bs = Ls.astype(complex) - 1j * np.diag(vy)
        self.Bd = Ld.astype(complex) - 1j * np.diag(vy)
        self.with_field = bool(with_field) and self.ynorm > 0
        if self.with_field:
            smu = assembly.maxw.sqrt_mu
            self.Bd = self.Bd - (2j * grid.wv / self.ynorm ** 2) * np.outer(vy * smu, smu)
        self._props = {}

    def propagators(self, dt, scheme="implicit-midpoint"):
        """One-step dense propagators (P_sum, P_diff), cached per (dt, scheme)."""
        key = (float(dt), scheme)
        if key not in self._props:
            n = self.Bs.shape[0]
            I = np.eye(n)
            out = []
            for B in (self.Bs, self.Bd):
                if scheme == "implicit-midpoint":
                    P = np.linalg.solve(I - 0.5 * dt * B, I + 0.5 * dt * B)
                elif scheme == "cn-explicit-transport":
                    # Crank-Nicolson on L, explicit midpoint on transport/field.
                    L = B.real.copy()
                    T = B - L
                    rhs = I + 0.5 * dt * L + dt * (T @ (I + 0.5 * dt * B))
                    P = np.linalg.solve(I - 0.5 * dt * L, rhs)
                else:
                    raise ValueError(f"unknown scheme: {scheme!r}")
                out.append(P)
            self._props[key] = tuple(out)
        return self._props[key]

    def apply(self, u):
        """B(y) applied to a two-species mode field u (2, n)."""
        us = (u[0] + u[1]) / _SQ2
        ud = (u[0] - u[1]) / _SQ2
        rs = self.Bs @ us
        rd = self.Bd @ ud
        return np.stack([(rs + rd) / _SQ2, (rs - rd) / _SQ2])

    def energy_metric_symmetric_bound(self):
        """Largest Rayleigh quotient of B in the mode-energy inner product.

        The energy metric adds |E_hat|^2 to the plain L2 norm; in that metric
        the symmetric part of B is negative semidefinite (the plain-L2
        symmetric part is not, the Poisson coupling is skew only against the
        field energy).
        """
        grid = self.asm.grid
        n = self.Bs.shape[0]
        smu = self.asm.maxw.sqrt_mu
        Ms = np.eye(n) * grid.wv
        Md = Ms.copy()
        if self.with_field:
            Md = Md + (2.0 * grid.wv ** 2 / self.ynorm ** 2) * np.outer(smu, smu)
        bounds = []
        for B, M in ((self.Bs, Ms), (self.Bd, Md)):
            H = 0.5 * (M @ B + B.conj().T @ M)
            w = sla.eigh(H, M, eigvals_only=True, subset_by_index=[n - 1, n - 1])
            bounds.append(float(w[-1]))
        return max(bounds)

    def mode_energy(self, us, ud, w2l):
        grid = self.asm.grid
        E = float(np.sum(w2l * (np.abs(us) ** 2 + np.abs(ud) ** 2)) * grid.wv)
        if self.ynorm > 0 and self.with_field:
            rho = _SQ2 * np.sum(self.asm.maxw.sqrt_mu * ud) * grid.wv
            E += abs(rho) ** 2 / self.ynorm ** 2
        return E


def build_mode_operator(y, assembly, grid=None, with_field=True):
    """Operator closure for u' = B(y) u (grid is carried by the assembly)."""
    return ModeOperator(y, assembly, with_field=with_field)


@dataclass
class ModeTrajectory:
    """Sampled mode evolution: times, functional, sigma-norm dissipation."""
    y: float
    l: float
    dt: float
    scheme: str
    t: np.ndarray
    energy: np.ndarray
    sigma_diss: np.ndarray
    max_rel_increase: float
    violations: int
    final_state: tuple = field(default=None, repr=False)


def evolve_mode(op, u0, dt, t_end, scheme="implicit-midpoint", l=0.0,
                n_samples=80, increase_tol=1e-11):
    """Integrate one mode and sample its functional and dissipation.

    u0 is a two-species complex field (2, n). Emits a warning-grade flag via
    the returned violation count when the functional increases beyond
    10x the integrator tolerance between consecutive samples.
    """
    asm = op.asm
    grid = asm.grid
    u0 = np.asarray(u0, dtype=complex)
    us = (u0[0] + u0[1]) / _SQ2
    ud = (u0[0] - u0[1]) / _SQ2
    Ps, Pd = op.propagators(dt, scheme)
    w2l = asm.weight.pow(l) ** 2
    steps = int(round(t_end / dt))
    samp = max(1, steps // max(n_samples, 1))
    ts, Es, Ds = [], [], []
    t = 0.0
    for k in range(steps + 1):
        if k % samp == 0 or k == steps:
            ts.append(t)
            Es.append(op.mode_energy(us, ud, w2l))
            d = asm.norms.sigma_sq_batch(np.stack([us, ud]), l, asm.gamma, asm.weight)
            Ds.append(float(d.sum()))
        if k < steps:
            us = Ps @ us
            ud = Pd @ ud
            t += dt
    Es = np.array(Es)
    ts = np.array(ts)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.diff(Es) / np.where(Es[:-1] > 0, Es[:-1], 1.0)
    max_inc = float(rel.max()) if rel.size else 0.0
    viol = int(np.sum(rel > increase_tol))
    if viol:
        import warnings
        warnings.warn(
            f"mode functional increased beyond tolerance at {viol} samples "
            f"(y = {op.ynorm:.3g}, max relative increase {max_inc:.2e})",
            RuntimeWarning,
        )
    return ModeTrajectory(
        y=op.ynorm, l=l, dt=dt, scheme=scheme, t=ts, energy=Es,
        sigma_diss=np.array(Ds), max_rel_increase=max_inc, violations=viol,
        final_state=(us, ud),
    )


def default_mode_data(assembly, kind="macroscopic", amplitude=1e-3, seed=0):
    """Initial mode data (y-independent amplitude).

    "macroscopic": eps (|v|^2 - 3) sqrt_mu (1, 1) -- excites the diffusive
    macroscopic branch, zero charge so the field starts at zero.
    "mixed": adds a species-asymmetric component that drives the Poisson
    coupling (used by the monotonicity sweep).
    """
    grid, maxw = assembly.grid, assembly.maxw
    smu = maxw.sqrt_mu
    core = (grid.vsq - 3.0) * smu
    if kind == "macroscopic":
        u = np.stack([core, core])
    elif kind == "mixed":
        rng = np.random.default_rng(np.random.Philox(key=seed))
        rough = rng.standard_normal(grid.n)
        asym = (1.0 + 0.2 * grid.v[0]) * smu + 0.05 * rough * smu
        u = np.stack([core + asym, core - asym])
    else:
        raise ValueError(f"unknown mode data kind: {kind!r}")
    return amplitude * u.astype(complex)


def _fit_loglog(t, I, t_lo, t_hi):
    win = (t >= t_lo) & (t <= t_hi) & (I > 0)
    x = np.log(t[win])
    yv = np.log(I[win])
    cf, cov = np.polyfit(x, yv, 1, cov=True)
    resid = yv - np.polyval(cf, x)
    r2 = 1.0 - resid.var() / yv.var() if yv.var() > 0 else 1.0
    ci = 1.96 * np.sqrt(cov[0, 0])
    return float(cf[0]), float(ci), float(r2)


def whole_space_decay(assembly, m=0, l=0.0, l_star=None, data="macroscopic",
                      amplitude=1e-3, y_min=0.02, y_max=None, n_y=48,
                      t_end=100.0, fit_window=(10.0, 100.0),
                      scheme="implicit-midpoint", n_samples=80, with_field=True,
                      seed=0):
    """Whole-space decay emulation by quadrature over a continuous y sweep.

    Evolves one mode per quadrature node, assembles
    ||grad_x^m w^l f(t)||^2 ~ 4 pi * int |y|^{2m} E_l(t, y) |y|^2 d|y|,
    and fits the log-log slope over the fit window. Norm slope = half the
    fitted squared-norm slope.

    Hard branch: the report slope is the measured fit; the y grid extends
    to 1.2 by default (the high-frequency block decays exponentially and is
    not part of the algebraic asymptotics).

    Soft branch: the velocity box floors the collision rate at
    <v_max>^{gamma+2}, so weight-starved algebraic mode decay cannot be
    exhibited dynamically; the report applies the weight-transfer
    interpolation with budget exponent j = 2 gamma l* / (gamma + 2) to the
    measured dissipation rate and the measured initial functional at weight
    l + l*, and reports that fit as `slope` together with the raw box fit
    as `slope_box`. l* defaults to 0.5; the low-frequency block (y <= 1)
    carries the quadrature.
    """
    gamma = assembly.gamma
    hard = gamma + 2.0 >= 0.0
    if y_max is None:
        y_max = 1.2 if hard else 1.0
    if l_star is None:
        l_star = 0.0 if hard else 0.5
    ys = np.geomspace(y_min, y_max, n_y)
    u0 = default_mode_data(assembly, data, amplitude, seed)
    trajs = []
    for y in ys:
        dt = 0.05 * min(1.0, 1.0 / y)
        op = ModeOperator([y, 0, 0], assembly, with_field=with_field)
        trajs.append(evolve_mode(op, u0, dt, t_end, scheme, l, n_samples))
    t_eval = np.geomspace(max(0.5 * fit_window[0], trajs[0].t[1]), t_end, 160)
    E_ty = np.array([np.interp(t_eval, tr.t, tr.energy) for tr in trajs]).T
    lw = np.gradient(np.log(ys)) * ys
    mlist = np.atleast_1d(m)
    report = {
        "gamma": gamma, "l": l, "l_star": l_star,
        "y_grid": [float(v) for v in ys],
        "t_window": [float(fit_window[0]), float(fit_window[1])],
        "scheme": scheme, "data": data,
        "total_violations": int(sum(tr.violations for tr in trajs)),
        "max_rel_increase": float(max(tr.max_rel_increase for tr in trajs)),
    }
    # measured dissipation rate scale from the best-resolved (largest-y) mode;
    # the mode functional decays like exp(-lam_hat y^2/(1+y^2) t)
    tr1 = trajs[-1]
    wfit = (tr1.t >= 2.0) & (tr1.t <= min(40.0, t_end / 2)) & (tr1.energy > 0)
    rate = -np.polyfit(tr1.t[wfit], np.log(tr1.energy[wfit]), 1)[0]
    lam_hat = float(rate / (tr1.y ** 2 / (1.0 + tr1.y ** 2)))
    report["lambda_hat"] = lam_hat

    def _soft_surrogate_fit(mm, lstar):
        """Weight-transfer cap fit: budget exponent j = 2 gamma l*/(gamma+2)."""
        j = 2.0 * gamma * lstar / (gamma + 2.0)
        w2 = assembly.weight.pow(l + lstar) ** 2
        grid = assembly.grid
        lad = float(np.sum(w2 * (np.abs(u0[0]) ** 2 + np.abs(u0[1]) ** 2)) * grid.wv)
        kap = lam_hat * ys ** 2 / (1.0 + ys ** 2)
        if j <= 0:
            S = np.ones((len(t_eval), len(ys))) * lad
        else:
            S = (1.0 + kap[None, :] * t_eval[:, None] / j) ** (-j) * lad
        surr = 4.0 * np.pi * (S * (ys ** (2 * mm + 2) * lw)[None, :]).sum(axis=1)
        win = (t_eval >= fit_window[0]) & (t_eval <= fit_window[1])
        if np.ptp(np.log(surr[win])) < 1e-12:
            return 0.0, 0.0, 1.0, j
        sl, ci, r2 = _fit_loglog(t_eval, surr, *fit_window)
        return sl, ci, r2, j

    lstars = [l_star] if np.isscalar(l_star) else list(l_star)
    results = {}
    for mm in mlist:
        meas = 4.0 * np.pi * (E_ty * (ys ** (2 * mm + 2) * lw)[None, :]).sum(axis=1)
        sl, ci, r2 = _fit_loglog(t_eval, meas, *fit_window)
        entry = {"m": int(mm), "slope_box": sl / 2.0, "slope_box_ci": ci / 2.0,
                 "r2_box": r2}
        if hard:
            entry.update({"slope": sl / 2.0, "slope_ci": ci / 2.0, "r2": r2})
        else:
            soft_fits = {}
            for lstar in lstars:
                sl_s, ci_s, r2_s, j = _soft_surrogate_fit(mm, lstar)
                soft_fits[float(lstar)] = {
                    "slope": sl_s / 2.0, "slope_ci": ci_s / 2.0, "r2": r2_s,
                    "j_budget": j,
                }
            first = soft_fits[float(lstars[0])]
            entry.update({"slope": first["slope"], "slope_ci": first["slope_ci"],
                          "r2": first["r2"], "j_budget": first["j_budget"],
                          "soft_fits": soft_fits})
        if entry["r2"] < 0.98:
            entry["warning"] = "no clean algebraic regime in the fit window"
        results[int(mm)] = entry
    report["fits"] = results
    if np.isscalar(m):
        report.update(results[int(m)])
        report["m"] = int(m)
    return report, trajs
