"""Discrete pseudo-differential calculus: symbols, quantization, brackets.

Symbols live on a velocity grid times the DFT frequency grid of the same
box, with the 2pi-in-the-exponent Fourier convention, so op_t(a) has kernel
K(x, x') = sum_k exp(2 pi i (x - x') eta_k) a((1-t)x + t x', eta_k) d_eta,
and a == 1 quantizes to the exact identity. Quantization runs in reduced
dimension d in {1, 2}; the smoothing-proof symbols are evaluated pointwise
in any dimension.
"""

from dataclasses import dataclass, field

import numpy as np


def chi0(z):
    """Smooth cutoff: 1 on |z| < 1/2, 0 on |z| >= 1, quintic smoothstep between."""
    z = np.abs(np.asarray(z, dtype=float))
    t = np.clip((z - 0.5) / 0.5, 0.0, 1.0)
    s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    return 1.0 - s


def chi0_prime(z):
    """Derivative of chi0 with respect to z (for z >= 0)."""
    z = np.asarray(z, dtype=float)
    t = np.clip((np.abs(z) - 0.5) / 0.5, 0.0, 1.0)
    ds = 30.0 * t * t * (1.0 - t) ** 2 / 0.5
    return -np.sign(z) * ds * ((np.abs(z) > 0.5) & (np.abs(z) < 1.0))


def _check_params(params):
    d1 = params.get("delta1", 0.5)
    if not 0.0 < d1 <= 0.5:
        raise ValueError("delta1 must lie in (0, 1/2]")
    gamma = params.get("gamma", -1.0)
    out = dict(params)
    out["delta1"] = float(d1)
    out["delta2"] = 1.0 - float(d1)
    out["gamma"] = float(gamma)
    out["l0"] = float(gamma) * out["delta2"]
    out.setdefault("K0", 1.0)
    return out


@dataclass
class SymbolTable:
    """Tabulated symbol a(v, eta) with its evaluator and parameters."""
    d: int
    v_axis: np.ndarray
    eta_axis: np.ndarray
    values: np.ndarray
    func: object = field(default=None, repr=False)
    kind: str = "custom"
    weight_class: str = "S(1)"
    params: dict = field(default_factory=dict)
    y: float = 0.0

    def sup(self):
        return float(np.abs(self.values).max())


def _grids(d, nv, vmax):
    if nv % 2 == 0:
        nv += 1           # odd point count keeps the frequency set symmetric
    hv = 2.0 * vmax / nv
    v = -vmax + (np.arange(nv) + 0.5) * hv
    eta = np.sort(np.fft.fftfreq(nv, d=hv))
    return v, eta


def _symbol_funcs(kind, p, y):
    ay = abs(y)
    gamma, K0 = p["gamma"], p["K0"]
    l0, d1, d2 = p["l0"], p["delta1"], p["delta2"]

    def br(x):
        return np.sqrt(1.0 + x ** 2)

    if kind == "a_tilde":
        return lambda v, eta: br(v) ** gamma * (1.0 + eta ** 2 + v ** 2) \
            + K0 * br(v) ** (gamma + 2.0)
    if kind == "b_tilde":
        return lambda v, eta: br(v) ** l0 * ay ** d1 * np.ones_like(eta)
    if kind == "chi":
        return lambda v, eta: chi0(br(eta) * br(v) ** l0 / ay ** d2)
    if kind == "theta":
        return lambda v, eta: br(v) ** l0 * ay ** (-1.0 - d2) * (y * eta) \
            * chi0(br(eta) * br(v) ** l0 / ay ** d2)
    raise ValueError(f"unknown symbol kind: {kind!r}")


def make_symbol(kind, gamma=-1.0, K0=1.0, delta1=0.5, y=1.0, d=1, nv=33,
                vmax=6.0, custom=None):
    """Tabulate one of the smoothing-proof symbols (or a custom callable).

    Kinds: "a_tilde" (admissible weight), "b_tilde", "chi" (cutoff),
    "theta" (bounded bracket symbol), "custom". Parameters are validated:
    delta1 in (0, 1/2], delta2 = 1 - delta1, l0 = gamma delta2.
    """
    p = _check_params({"gamma": gamma, "K0": K0, "delta1": delta1})
    v, eta = _grids(d, nv, vmax)
    if kind == "custom":
        if custom is None:
            raise ValueError("custom symbol needs a callable")
        func = custom
        wclass = "custom"
    else:
        func = _symbol_funcs(kind, p, y)
        wclass = {"a_tilde": "S(a_tilde)", "b_tilde": "S(b_tilde)",
                  "chi": "S(1)", "theta": "S(1)"}[kind]
    if d == 1:
        V, H = np.meshgrid(v, eta, indexing="ij")
        vals = func(V, H)
    elif d == 2:
        # radial evaluator: tabulate on (|v|, |eta|) over the product grid
        V1, V2 = np.meshgrid(v, v, indexing="ij")
        H1, H2 = np.meshgrid(eta, eta, indexing="ij")
        vals = func(np.sqrt(V1 ** 2 + V2 ** 2)[:, :, None, None],
                    np.sqrt(H1 ** 2 + H2 ** 2)[None, None, :, :])
    else:
        raise ValueError("quantizable symbols support d in {1, 2}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("symbol table has non-finite entries")
    return SymbolTable(d=d, v_axis=v, eta_axis=eta, values=np.asarray(vals),
                       func=func, kind=kind, weight_class=wclass, params=p,
                       y=float(y))


@dataclass
class QuantizedOperator:
    """Dense realization of op_t(a) on the velocity grid."""
    matrix: np.ndarray
    t: float
    hermiticity_defect: float
    kind: str = "custom"


def quantize(sym, t=0.5, hermitize=True, dense_cap=64):
    """Dense op_t(a), t in {0, 1/2}; midpoint quadrature over the eta grid.

    Weyl quantization (t = 1/2) of a real symbol is hermitized after
    quadrature. Raises when the dense kernel would exceed the cap.
    """
    if t not in (0.0, 0.5):
        raise ValueError("quantization supports t in {0, 1/2}")
    v, eta = sym.v_axis, sym.eta_axis
    nv = v.size
    if sym.d == 1:
        if nv > dense_cap:
            raise ValueError(f"grid too large for a dense kernel (nv={nv})")
        deta = 1.0 / (nv * (v[1] - v[0]))
        dv = v[1] - v[0]
        X = v[:, None]
        Y = v[None, :]
        mid = (1.0 - t) * X + t * Y
        if sym.func is not None:
            a_mid = sym.func(mid[:, :, None], eta[None, None, :])
        else:
            a_mid = np.stack([
                np.interp(mid.ravel(), v, sym.values[:, k]).reshape(nv, nv)
                for k in range(eta.size)
            ], axis=-1)
        phase = np.exp(2j * np.pi * (X - Y)[:, :, None] * eta[None, None, :])
        M = (a_mid * phase).sum(axis=-1) * deta * dv
    elif sym.d == 2:
        if nv > 32:
            raise ValueError(f"grid too large for a dense 2D kernel (nv={nv})")
        if sym.func is None:
            raise ValueError("2D quantization needs a symbol evaluator")
        deta = 1.0 / (nv * (v[1] - v[0]))
        dv = v[1] - v[0]
        n2 = nv * nv
        V1, V2 = np.meshgrid(v, v, indexing="ij")
        P = np.stack([V1.ravel(), V2.ravel()])          # (2, n2)
        M = np.zeros((n2, n2), dtype=complex)
        diff1 = P[0][:, None] - P[0][None, :]
        diff2 = P[1][:, None] - P[1][None, :]
        mid1 = (1.0 - t) * P[0][:, None] + t * P[0][None, :]
        mid2 = (1.0 - t) * P[1][:, None] + t * P[1][None, :]
        rmid = np.sqrt(mid1 ** 2 + mid2 ** 2)
        for e1 in eta:
            for e2 in eta:
                a_mid = sym.func(rmid, np.hypot(e1, e2))
                M += a_mid * np.exp(2j * np.pi * (diff1 * e1 + diff2 * e2))
        M *= deta ** 2 * dv ** 2
    defect = float(np.abs(M - M.conj().T).max())
    if hermitize and t == 0.5 and np.isrealobj(sym.values):
        M = 0.5 * (M + M.conj().T)
    return QuantizedOperator(matrix=M, t=t, hermiticity_defect=defect,
                             kind=sym.kind)


def compose_first_order(a, b):
    """First-order symbol composition a #_1 b = ab + (1/4 pi i){a, b}.

    The Poisson bracket uses second-order finite differences on the
    tabulated (v, eta) grid (one-sided at the edges).
    """
    if a.d != 1 or b.d != 1:
        raise ValueError("first-order composition is tabulated for d = 1")
    if a.values.shape != b.values.shape:
        raise ValueError("symbols must share a grid")
    dv = a.v_axis[1] - a.v_axis[0]
    da_v = np.gradient(a.values, dv, axis=0)
    db_v = np.gradient(b.values, dv, axis=0)
    da_e = np.gradient(a.values, a.eta_axis, axis=1)
    db_e = np.gradient(b.values, b.eta_axis, axis=1)
    bracket = da_e * db_v - da_v * db_e
    vals = a.values * b.values + bracket / (4j * np.pi)
    func = None
    if a.func is not None and b.func is not None:
        he = float(np.min(np.diff(a.eta_axis)))
        af, bf = a.func, b.func

        def func(v, e, af=af, bf=bf, hv=dv, he=he):
            # same centered stencil as the tabulated bracket, evaluable at
            # the quantization midpoints
            br = ((af(v, e + he) - af(v, e - he)) * (bf(v + hv, e) - bf(v - hv, e))
                  - (af(v + hv, e) - af(v - hv, e)) * (bf(v, e + he) - bf(v, e - he))) \
                / (4.0 * hv * he)
            return af(v, e) * bf(v, e) + br / (4j * np.pi)

    return SymbolTable(d=1, v_axis=a.v_axis, eta_axis=a.eta_axis, values=vals,
                       func=func, kind=f"{a.kind}#1{b.kind}",
                       weight_class="composed", params=dict(a.params),
                       y=a.y)


def operator_norm_probe(op, maxiter=1000, tol=1e-9, seed=0, block=4):
    """Largest singular value by (block) power iteration on op^H op.

    A small block keeps the iteration robust when the top singular values
    are nearly degenerate (theta^w has a symmetric spectrum).
    """
    M = op.matrix if isinstance(op, QuantizedOperator) else np.asarray(op)
    rng = np.random.default_rng(np.random.Philox(key=seed))
    n = M.shape[1]
    X = rng.standard_normal((n, block)) + 1j * rng.standard_normal((n, block))
    X, _ = np.linalg.qr(X)
    MH = M.conj().T
    prev = 0.0
    for it in range(maxiter):
        Y = MH @ (M @ X)
        H = X.conj().T @ Y
        s = float(np.linalg.eigvalsh(0.5 * (H + H.conj().T))[-1])
        if abs(s - prev) <= tol * max(abs(s), 1.0):
            return float(np.sqrt(max(s, 0.0)))
        X, _ = np.linalg.qr(Y)
        prev = s
    raise RuntimeError(f"power iteration did not converge in {maxiter} steps")


def bracket_decomposition_check(y, gamma=-1.0, delta1=0.5, K0=1.0,
                                nv=24, neta=24, vmax=6.0, eta_max=None,
                                fd_step=None):
    """Pointwise check of {theta, v.y} = b_tilde + R1 + R2 on a 4D sample grid.

    y is taken along the first axis; the grid spans (v1, v2, eta1, eta2)
    with the remaining components zero (the symbols depend on |v|, |eta|,
    and eta1 only). The bracket side uses a second-order finite difference
    of step fd_step along eta1 (grid spacing by default); the decomposition
    side is closed-form. Reports the maximum discrepancy, the domination
    ratios sup|R1|/a_tilde and sup|R2|/a_tilde, and the discrepancy on the
    region where the cutoff is identically one across the whole stencil
    (theta is linear in eta1 there, so the difference is exact).
    """
    p = _check_params({"gamma": gamma, "K0": K0, "delta1": delta1})
    l0, d1, d2 = p["l0"], p["delta1"], p["delta2"]
    ay = abs(float(y))
    if eta_max is None:
        eta_max = max(2.0, 2.0 * ay ** d2)
    v1 = np.linspace(-vmax, vmax, nv)
    v2 = np.linspace(0.0, vmax, nv // 2)
    e1 = np.linspace(-eta_max, eta_max, neta)
    e2 = np.linspace(0.0, eta_max, neta // 2)
    V1, V2, E1, E2 = np.meshgrid(v1, v2, e1, e2, indexing="ij")
    bv = np.sqrt(1.0 + V1 ** 2 + V2 ** 2)
    be = np.sqrt(1.0 + E1 ** 2 + E2 ** 2)

    def zeta(E1v):
        return np.sqrt(1.0 + E1v ** 2 + E2 ** 2) * bv ** l0 / ay ** d2

    def theta_of(E1v):
        return bv ** l0 * ay ** (-1.0 - d2) * (ay * E1v) * chi0(zeta(E1v))

    he = float(fd_step) if fd_step is not None else float(e1[1] - e1[0])
    bracket_fd = ay * (theta_of(E1 + he) - theta_of(E1 - he)) / (2.0 * he)

    z = zeta(E1)
    btilde = bv ** l0 * ay ** (1.0 - d2)
    R1 = bv ** l0 * ay ** (1.0 - d2) * (chi0(z) - 1.0)
    dchi_de1 = chi0_prime(z) * bv ** l0 / ay ** d2 * (E1 / be)
    R2 = bv ** l0 * ay ** (-1.0 - d2) * (ay * E1) * (ay * dchi_de1)
    analytic = btilde + R1 + R2

    atilde = bv ** gamma * (1.0 + E1 ** 2 + E2 ** 2 + V1 ** 2 + V2 ** 2) \
        + K0 * bv ** (gamma + 2.0)
    disc = np.abs(bracket_fd - analytic)
    chi_one = (chi0(z) >= 1.0) & (chi0(zeta(E1 + he)) >= 1.0) \
        & (chi0(zeta(E1 - he)) >= 1.0)
    report = {
        "y": ay, "gamma": gamma, "delta1": d1,
        "max_discrepancy": float(disc.max()),
        "fd_step_eta": he,
        "r1_over_atilde": float((np.abs(R1) / atilde).max()),
        "r2_over_atilde": float((np.abs(R2) / atilde).max()),
        "max_disc_on_chi_one": float(disc[chi_one].max()) if chi_one.any() else 0.0,
        "theta_sup": float(np.abs(theta_of(E1)).max()),
    }
    return report


def theta_norm_sweep(gamma=-1.0, delta1=0.5, K0=1.0, nv=33, vmax=6.0,
                     y_exponents=range(-4, 5), dense_cap=64):
    """sup ||theta^w|| over a dyadic y sweep (power-iteration oracle)."""
    norms = {}
    for e in y_exponents:
        y = 2.0 ** e
        sym = make_symbol("theta", gamma=gamma, delta1=delta1, K0=K0, y=y,
                          nv=nv, vmax=vmax)
        op = quantize(sym, t=0.5, dense_cap=dense_cap)
        norms[float(y)] = operator_norm_probe(op)
    return {"norms": norms, "sup": max(norms.values()), "nv": nv}


def sigma_norm_1d(f, v, gamma):
    """One-dimensional analog of the weighted dissipation norm (l = 0)."""
    h = v[1] - v[0]
    df = np.gradient(f, h)
    br2 = 1.0 + v ** 2
    val = np.sum(br2 ** (gamma / 2.0) * np.abs(df) ** 2) * h \
        + np.sum(br2 ** ((gamma + 2.0) / 2.0) * np.abs(f) ** 2) * h
    return float(np.sqrt(val))


def atilde_sigma_bound_check(gamma=-1.0, K0=1.0, nv=33, vmax=6.0,
                             n_fields=50, band=6, seed=0):
    """Measured constant in ||(a_tilde^{1/2})^w f|| <= C |f|_{sigma,0} (1D)."""
    sym = make_symbol("custom", gamma=gamma, K0=K0, nv=nv, vmax=vmax,
                      custom=lambda v, eta: np.sqrt(
                          (1.0 + v ** 2) ** (gamma / 2.0)
                          * (1.0 + eta ** 2 + v ** 2)
                          + K0 * (1.0 + v ** 2) ** ((gamma + 2.0) / 2.0)))
    op = quantize(sym, t=0.5)
    v = sym.v_axis
    h = v[1] - v[0]
    rng = np.random.default_rng(np.random.Philox(key=seed))
    ratios = []
    n = v.size
    for _ in range(n_fields):
        coef = np.zeros(n, dtype=complex)
        idx = np.arange(1, band + 1)
        c = rng.standard_normal(band) + 1j * rng.standard_normal(band)
        coef[idx] = c
        coef[-idx] = np.conj(c)
        coef[0] = rng.standard_normal()
        f = np.fft.ifft(coef).real
        num = float(np.sqrt(np.sum(np.abs(op.matrix @ f) ** 2) * h))
        den = sigma_norm_1d(f, v, gamma)
        ratios.append(num / den)
    return {"C_measured": float(max(ratios)), "n_fields": n_fields}


def interpolation_display_check(alpha, beta=0, gamma=-1.0, delta1=None,
                                n_default=20.0, delta=0.5,
                                t_grid=None, v_grid=None, y_grid=None,
                                refine=2.0):
    """Check the time-weight interpolation display pointwise on a sample grid.

    psi_{|a|-3-1/(2N)} <= delta b_tilde^{1/2} psi_{|a|-3}
                          + C_{0,delta} <v>^{-l0 |a|/delta1} |y|^{-|a|}.

    The display is a Young-inequality split in the weight b_tilde, so the
    constant is taken in closed form, C = q^{-1} (delta p)^{-q/p} with the
    conjugate pair implied by the order rule; the check evaluates the
    pointwise inequality with that constant on a base and a refined, wider
    (t, v, y) grid, and also reports the attained supremum.
    """
    from .solver import PsiWeight
    psi = PsiWeight("tn", n_default=n_default)
    if delta1 is None:
        delta1 = psi.delta1(alpha, beta)
    p = _check_params({"gamma": gamma, "delta1": delta1})
    l0 = p["l0"]
    N = psi.N_of(alpha, beta)
    k = alpha - 3.0
    if k - 1.0 / (2 * N) > 0:
        q = 2.0 * N * k
        pc = q / (q - 1.0)
    else:
        # below the order threshold the left side is 1; the split pairs
        # b_tilde^{eta/2} with its reciprocal at eta/(1-eta) = 2 alpha/delta1
        eta = (2.0 * alpha / p["delta1"]) / (1.0 + 2.0 * alpha / p["delta1"])
        pc = 1.0 / eta
        q = 1.0 / (1.0 - eta)
    C_young = (1.0 / q) * (delta * pc) ** (-q / pc)
    if t_grid is None:
        t_grid = np.linspace(0.02, 1.0, 40)
    if v_grid is None:
        v_grid = np.linspace(0.0, 8.0, 40)
    if y_grid is None:
        y_grid = np.geomspace(0.1, 10.0, 30)

    def measure(ts, vs, ys):
        T, V, Y = np.meshgrid(ts, vs, ys, indexing="ij")
        bv = np.sqrt(1.0 + V ** 2)
        lhs = np.where(k - 1.0 / (2 * N) <= 0, 1.0,
                       T ** (N * max(k - 1 / (2 * N), 0.0)))
        psi_k = np.where(k <= 0, 1.0, T ** (N * max(k, 0.0)))
        btilde = bv ** l0 * np.abs(Y) ** p["delta1"]
        term1 = delta * np.sqrt(btilde) * psi_k
        gain = bv ** (-l0 * alpha / p["delta1"]) * np.abs(Y) ** (-alpha)
        need = np.where(lhs > term1, (lhs - term1) / gain, 0.0)
        return float(need.max())

    C0 = measure(t_grid, v_grid, y_grid)
    tr = np.linspace(t_grid[0] / refine, 1.0, int(len(t_grid) * refine))
    vr = np.linspace(0.0, v_grid[-1] * refine, int(len(v_grid) * refine))
    yr = np.geomspace(y_grid[0] / refine, y_grid[-1] * refine,
                      int(len(y_grid) * refine))
    C1 = measure(tr, vr, yr)
    return {
        "alpha": alpha, "beta": beta, "N": float(N), "delta": delta,
        "delta1": float(delta1), "C_young": float(C_young),
        "C_attained_base": C0, "C_attained_refined": C1,
        "holds_base": bool(C0 <= C_young * (1.0 + 1e-9)),
        "holds_on_refined": bool(C1 <= C_young * (1.0 + 1e-9)),
    }
