"""Command-line front end: run files, seeding, persistence, reports.

Every output embeds the hash of the fully resolved configuration, outputs
carry no wall-clock state, and all randomness flows through a counter-based
generator keyed by the seed, so identical config + seed reproduce outputs
byte for byte. Exit codes: 0 success, 1 check failure, 2 config error.
"""

import argparse
import hashlib
import io as _io
import json
import sys
import zipfile
from pathlib import Path

import numpy as np

from .grid import build_grid, maxwellian
from .collision import CollisionAssembly, assemble_sigma, coercivity_probe
from .macroscopic import moment_residuals, MacroProjector
from .lineardecay import whole_space_decay
from .solver import (Simulation, TwoSpeciesField, make_initial_data,
                     energy_report, PsiWeight, energy_inequality_monitor)
from . import weyl


class ConfigError(Exception):
    pass


class CheckFailure(Exception):
    pass


DEFAULTS = {
    "grid": {"nv": 8, "vmax": 6.0, "nx": 32, "lx": float(np.pi)},
    "physics": {"gamma": 0.0, "K0": 1.0, "K": 3, "l": 3.0, "psi_mode": "one",
                "delta1_policy": "largest", "lambda_h": None,
                "moment_weight": 10.0},
    "scheme": {"dt": 0.05, "t_end": 5.0, "scheme": "implicit-midpoint",
               "snapshot_every": 5, "disable_gamma": False,
               "disable_field_nl": False},
    "io": {"out_dir": ".", "cache_dir": None},
    "decay": {"m": 0, "l": 0.0, "l_star": None, "y_min": 0.02, "y_max": None,
              "n_y": 48, "t_end": 100.0, "fit_lo": 10.0, "fit_hi": 100.0,
              "data": "macroscopic"},
    "initial_data": {"kind": "macroscopic", "amplitude": 1e-3, "mode": 1,
                     "asym": 0.25, "path": None},
    "seed": 0,
}

_SCALAR_BLOCKS = {"seed"}


def _validate(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("run file must hold a JSON object")
    out = json.loads(json.dumps(DEFAULTS))
    for block, val in cfg.items():
        if block in _SCALAR_BLOCKS:
            if not isinstance(val, int) or val < 0:
                raise ConfigError(f"config key 'seed' must be a nonnegative integer")
            out[block] = val
            continue
        if block not in DEFAULTS:
            raise ConfigError(f"unknown config block '{block}'")
        if not isinstance(val, dict):
            raise ConfigError(f"config block '{block}' must be an object")
        for key, v in val.items():
            if key not in DEFAULTS[block]:
                raise ConfigError(f"unknown config key '{block}.{key}'")
            out[block][key] = v
    if out["physics"]["psi_mode"] not in ("one", "tn"):
        raise ConfigError("config key 'physics.psi_mode' must be 'one' or 'tn'")
    if out["scheme"]["scheme"] not in ("implicit-midpoint", "cn-explicit-transport"):
        raise ConfigError("config key 'scheme.scheme' is not a known scheme")
    return out


def config_hash(cfg):
    """Hash of the resolved configuration, excluding io destinations."""
    hashed = {k: v for k, v in cfg.items() if k != "io"}
    text = json.dumps(hashed, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path, obj, cfg_h):
    rec = dict(_jsonable(obj))
    rec["config_hash"] = cfg_h
    Path(path).write_text(
        json.dumps(rec, sort_keys=True, ensure_ascii=False, indent=1) + "\n",
        encoding="utf-8",
    )


def write_csv(path, header, rows, cfg_h):
    lines = [f"# config_hash={cfg_h}", ",".join(header)]
    for row in rows:
        lines.append(",".join(f"{v:.17g}" if isinstance(v, float) else str(v)
                              for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_snapshots(path, arrays, cfg_h):
    """Deterministic array container: zip of .npy members, fixed timestamps."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        meta = {"config_hash": cfg_h,
                "members": {k: {"shape": list(np.asarray(v).shape),
                                "dtype": str(np.asarray(v).dtype)}
                            for k, v in arrays.items()}}
        for name, arr in list(arrays.items()) + [("__meta__", None)]:
            if name == "__meta__":
                data = json.dumps(meta, sort_keys=True).encode("utf-8")
            else:
                buf = _io.BytesIO()
                np.save(buf, np.asarray(arr))
                data = buf.getvalue()
            info = zipfile.ZipInfo(name + (".json" if name == "__meta__" else ".npy"),
                                   date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, data)


def read_snapshots(path):
    out = {}
    with zipfile.ZipFile(path) as zf:
        for name in zf.namelist():
            if name.endswith(".npy"):
                out[name[:-4]] = np.load(_io.BytesIO(zf.read(name)))
    return out


def _assembly_from(cfg):
    g = build_grid(**cfg["grid"])
    mw = maxwellian(g)
    asm = CollisionAssembly(g, mw, cfg["physics"]["gamma"],
                            sigma_cache_dir=cfg["io"]["cache_dir"])
    return g, mw, asm


def cmd_simulate(cfg, out_dir, cfg_h):
    g, mw, asm = _assembly_from(cfg)
    sc = cfg["scheme"]
    sim = Simulation(asm, sc["dt"], scheme=sc["scheme"],
                     disable_gamma=sc["disable_gamma"],
                     disable_field_nl=sc["disable_field_nl"])
    idc = cfg["initial_data"]
    f0 = make_initial_data(g, mw, idc["kind"], idc["amplitude"], idc["mode"],
                           idc["asym"], cfg["seed"], idc["path"])
    state = TwoSpeciesField(f0, g, mw)
    psi = PsiWeight(cfg["physics"]["psi_mode"])
    K, l = cfg["physics"]["K"], cfg["physics"]["l"]
    proj = sim.projector
    reports = []

    def cb(st):
        reports.append(energy_report(st, asm, K, l, psi, proj))

    snaps = sim.run(state, sc["t_end"], sc["snapshot_every"], callback=cb)
    times = np.array([t for t, _ in snaps])
    fields = np.stack([f for _, f in snaps])
    write_snapshots(out_dir / "snapshots.npz",
                    {"t": times, "f": fields}, cfg_h)
    keys = sorted(reports[0].summands)
    header = ["t"] + keys + ["E_total", "Eh_total", "D_total", "dtphi_inf",
                             "z1", "min_F", "div_E_residual"]
    rows = [[r.t] + [r.summands[k] for k in keys]
            + [r.E_total, r.Eh_total, r.D_total, r.dtphi_inf, r.z1, r.min_F,
               r.div_E_residual] for r in reports]
    write_csv(out_dir / "energy.csv", header, rows, cfg_h)
    summary = {
        "t_end": float(times[-1]),
        "n_snapshots": len(snaps),
        "E_final": reports[-1].E_total,
        "min_F_final": reports[-1].min_F,
        "div_E_residual_final": reports[-1].div_E_residual,
    }
    write_json(out_dir / "simulate_report.json", summary, cfg_h)
    return 0


def cmd_decay(cfg, out_dir, cfg_h):
    g, mw, asm = _assembly_from(cfg)
    dc = cfg["decay"]
    report, trajs = whole_space_decay(
        asm, m=dc["m"], l=dc["l"], l_star=dc["l_star"], data=dc["data"],
        y_min=dc["y_min"], y_max=dc["y_max"], n_y=dc["n_y"],
        t_end=dc["t_end"], fit_window=(dc["fit_lo"], dc["fit_hi"]),
        scheme=cfg["scheme"]["scheme"], seed=cfg["seed"])
    report.pop("fits", None)
    write_json(out_dir / "decay_report.json", report, cfg_h)
    rows = []
    for tr in trajs:
        for t, e, dsc in zip(tr.t, tr.energy, tr.sigma_diss):
            rows.append([float(t), float(tr.y), float(e), float(dsc)])
    write_csv(out_dir / "decay_modes.csv",
              ["t", "y", "functional", "sigma_dissipation"], rows, cfg_h)
    ok = report.get("r2", 1.0) >= 0.98 and report["total_violations"] == 0
    return 0 if ok else 1


def cmd_collision_check(cfg, out_dir, cfg_h):
    g, mw, asm = _assembly_from(cfg)
    res = asm.null_residuals()
    sig_fft = asm.sigma
    sig_dir = assemble_sigma(g, mw, cfg["physics"]["gamma"], method="direct",
                             kernel=asm.kernel)
    sig_agree = float(np.abs(sig_fft - sig_dir).max())
    lam, prob = coercivity_probe(asm)
    report = {
        "nv": g.nv, "gamma": cfg["physics"]["gamma"],
        "null_residuals": [float(r) for r in res],
        "null_residual_max": float(res.max()),
        "sigma_fft_vs_direct": sig_agree,
        "lambda_h": lam,
        "coercivity": prob,
        "thresholds": {"null_residual_max": 5e-3, "sigma_fft_vs_direct": 1e-10},
    }
    ok = res.max() <= 5e-3 and sig_agree <= 1e-10 and lam > 0
    report["passed"] = bool(ok)
    write_json(out_dir / "collision_report.json", report, cfg_h)
    return 0 if ok else 1


def cmd_moments_check(cfg, out_dir, cfg_h):
    """Residual convergence study: spin-up past the stiff transient, then
    compare RMS residuals per line at (dt, dt/2) over a fixed 0.6 window.

    The study uses its own data scale (amplitude 1e-2, species-asymmetric)
    so the time-discretization signal sits well above the quadrature floors.
    """
    g, mw, asm = _assembly_from(cfg)
    proj = MacroProjector(g, mw)
    sc = cfg["scheme"]
    idc = cfg["initial_data"]
    base_dt = sc["dt"]
    spin = Simulation(asm, base_dt / 4.0, scheme=sc["scheme"])
    st = TwoSpeciesField(
        make_initial_data(g, mw, idc["kind"], 1e-2, idc["mode"],
                          0.5, cfg["seed"]), g, mw)
    for _ in range(int(round(0.5 / (base_dt / 4.0)))):
        spin.step(st)
    fstart = st.f.copy()
    horizon = 0.6

    def rms_by_line(dt):
        simx = Simulation(asm, dt, scheme=sc["scheme"])
        stx = TwoSpeciesField(fstart.copy(), g, mw)
        snaps = simx.run(stx, dt * int(round(horizon / dt)), 1)
        recs = moment_residuals(snaps, dt, g, mw, asm.apply_L, simx.forcing, proj)
        agg = {}
        for r in recs:
            agg.setdefault(r["equation_id"], []).append(r["l2_residual"] ** 2)
        return recs, {k: float(np.sqrt(np.mean(v))) for k, v in agg.items()}

    recs1, r1 = rms_by_line(base_dt)
    _, r2 = rms_by_line(base_dt / 2.0)
    orders = {k: float(np.log2(r1[k] / max(r2[k], 1e-300)))
              for k in r1 if r1[k] > 1e-10}
    min_order = min(orders.values()) if orders else float("nan")
    report = {
        "dt_pair": [base_dt, base_dt / 2.0],
        "residuals_coarse": r1,
        "orders": orders,
        "min_order": min_order,
        "records": recs1,
    }
    ok = bool(orders) and min_order >= 1.8
    report["passed"] = ok
    write_json(out_dir / "moments_report.json", report, cfg_h)
    return 0 if ok else 1


def cmd_symbols_check(cfg, out_dir, cfg_h):
    gamma = cfg["physics"]["gamma"] if cfg["physics"]["gamma"] < 0 else -1.0
    one = weyl.make_symbol("custom", custom=lambda v, e: np.ones_like(v * e))
    op1 = weyl.quantize(one, 0.5)
    id_err = float(np.abs(op1.matrix - np.eye(op1.matrix.shape[0])).max())
    vs = weyl.make_symbol("custom", custom=lambda v, e: v * np.ones_like(e))
    opv = weyl.quantize(vs, 0.5)
    mult_err = float(np.abs(opv.matrix - np.diag(vs.v_axis)).max())
    br = weyl.bracket_decomposition_check(2.0, gamma=gamma)
    br_fine = weyl.bracket_decomposition_check(2.0, gamma=gamma,
                                               fd_step=br["fd_step_eta"] / 2)
    sweeps = {nv: weyl.theta_norm_sweep(gamma=gamma, nv=nv)["sup"]
              for nv in (21, 33, 49)}
    ratio = max(sweeps.values()) / min(sweeps.values())
    bd = weyl.atilde_sigma_bound_check(gamma=gamma)
    interp = [weyl.interpolation_display_check(a, b, gamma=gamma)
              for (a, b) in ((4, 0), (2, 1))]
    ok = (id_err < 1e-6 and mult_err < 1e-6
          and br_fine["max_discrepancy"] <= 0.6 * br["max_discrepancy"]
          and br["max_disc_on_chi_one"] < 1e-12
          and ratio < 2.0
          and all(i["holds_on_refined"] for i in interp))
    report = {
        "identity_error": id_err,
        "multiplication_error": mult_err,
        "bracket": br,
        "bracket_half_step": br_fine["max_discrepancy"],
        "theta_norm_sup_by_nv": {str(k): v for k, v in sweeps.items()},
        "theta_norm_refinement_ratio": float(ratio),
        "atilde_sigma_constant": bd["C_measured"],
        "interpolation_checks": interp,
        "passed": bool(ok),
    }
    write_json(out_dir / "symbols_report.json", report, cfg_h)
    # symbol dump per the interface: CSV (v, eta, value)
    th = weyl.make_symbol("theta", gamma=gamma, y=2.0)
    rows = [[float(v), float(e), float(th.values[i, j])]
            for i, v in enumerate(th.v_axis)
            for j, e in enumerate(th.eta_axis)]
    write_csv(out_dir / "theta_symbol.csv", ["v", "eta", "value"], rows, cfg_h)
    return 0 if ok else 1


def cmd_energy_report(cfg, out_dir, cfg_h):
    g, mw, asm = _assembly_from(cfg)
    sc = cfg["scheme"]
    idc = cfg["initial_data"]
    sim = Simulation(asm, sc["dt"], scheme=sc["scheme"],
                     disable_gamma=sc["disable_gamma"],
                     disable_field_nl=sc["disable_field_nl"])
    f0 = make_initial_data(g, mw, idc["kind"], idc["amplitude"], idc["mode"],
                           idc["asym"], cfg["seed"])
    state = TwoSpeciesField(f0, g, mw)
    psi = PsiWeight(cfg["physics"]["psi_mode"])
    K, l = cfg["physics"]["K"], cfg["physics"]["l"]
    reports = []
    sim.run(state, sc["t_end"], sc["snapshot_every"],
            callback=lambda st: reports.append(
                energy_report(st, asm, K, l, psi, sim.projector)))
    lam_h = cfg["physics"]["lambda_h"]
    if lam_h is None:
        lam_h, _ = coercivity_probe(asm)
    dt_snap = sc["dt"] * sc["snapshot_every"]
    mon = energy_inequality_monitor(reports, dt_snap, lam_h / 2.0)
    mon["lambda_h"] = lam_h
    write_json(out_dir / "inequality_report.json", mon, cfg_h)
    keys = sorted(reports[0].summands)
    header = ["t"] + keys + ["E_total", "Eh_total", "D_total", "dtphi_inf"]
    rows = [[r.t] + [r.summands[k] for k in keys]
            + [r.E_total, r.Eh_total, r.D_total, r.dtphi_inf]
            for r in reports]
    write_csv(out_dir / "energy.csv", header, rows, cfg_h)
    ok = np.isfinite(mon["C_cov"])
    return 0 if ok else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "decay": cmd_decay,
    "collision-check": cmd_collision_check,
    "moments-check": cmd_moments_check,
    "symbols-check": cmd_symbols_check,
    "energy-report": cmd_energy_report,
}


def build_parser():
    ap = argparse.ArgumentParser(
        prog="vpl",
        description="Vlasov-Poisson-Landau numerical laboratory")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=str, default=None)
    ap.add_argument("--out", type=str, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--gamma", type=float, default=None)
    ap.add_argument("--nv", type=int, default=None)
    ap.add_argument("--nx", type=int, default=None)
    ap.add_argument("--dt", type=float, default=None)
    ap.add_argument("--t-end", type=float, default=None)
    ap.add_argument("--psi", choices=["one", "tn"], default=None)
    ap.add_argument("--m", type=int, default=None)
    ap.add_argument("--K", type=int, default=None)
    ap.add_argument("--l", type=float, default=None)
    ap.add_argument("--disable-gamma", action="store_true", default=None)
    ap.add_argument("--cache-dir", type=str, default=None)
    return ap


_FLAG_MAP = {
    "seed": ("seed",), "gamma": ("physics", "gamma"),
    "nv": ("grid", "nv"), "nx": ("grid", "nx"),
    "dt": ("scheme", "dt"), "t_end": ("scheme", "t_end"),
    "psi": ("physics", "psi_mode"), "m": ("decay", "m"),
    "K": ("physics", "K"), "l": ("physics", "l"),
    "disable_gamma": ("scheme", "disable_gamma"),
    "cache_dir": ("io", "cache_dir"), "out": ("io", "out_dir"),
}


def resolve_config(args):
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"run file not found: {args.config}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"run file is not valid JSON: {e}")
    cfg = _validate(raw)
    for flag, dest in _FLAG_MAP.items():
        val = getattr(args, flag, None)
        if val is None:
            continue
        node = cfg
        for k in dest[:-1]:
            node = node[k]
        node[dest[-1]] = val
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    cfg_h = config_hash(cfg)
    out_dir = Path(cfg["io"]["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        rc = COMMANDS[args.command](cfg, out_dir, cfg_h)
    except CheckFailure as e:
        print(f"check failure: {e}", file=sys.stderr)
        return 1
    if rc != 0:
        print(f"{args.command}: acceptance thresholds not met", file=sys.stderr)
    return rc


run = main


if __name__ == "__main__":
    sys.exit(main())
