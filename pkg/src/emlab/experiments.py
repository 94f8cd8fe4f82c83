"""Experiment orchestration: configs in, check rows and artifacts out.

Each experiment builds its inputs from an ExperimentConfig, runs the relevant
module operations, and returns a RunReport of {name, value, bound, pass}
rows plus tables and plot data.  emit_report persists everything; re-running
with the same config and seed reproduces the CSV bytes exactly (run.json
carries the wall time and is exempt).
"""

import json
import time

import numpy as np

from . import capacity as cap
from . import geometry as geo
from . import growth
from . import measure as ms
from . import norms
from . import operator as op_mod

DEFAULT_SEED = 0x5EED
FALLBACK_ALPHA = 0.4          # data exponent when phi is not a plain power


class UnknownExperimentError(ValueError):
    """Experiment id not in the registry."""


DEFAULT_DOMAINS = {
    "wellposed": {"shape": "box", "h": 1 / 32},
    "illposed": {"shape": "exterior_of_ball", "h": 1 / 4,
                 "params": {"radius": 1.0, "r_out": 4.0}},
    "norm_equivalence": {"shape": "box", "h": 1 / 16},
    "cdc_sweep": {"shape": "box", "h": 1 / 16},
    "measure_decay": {"shape": "box", "h": 1 / 32},
    "growth_suite": None,
    "campanato_equivalence": {"shape": "box", "h": 1 / 16},
}

DEFAULT_PHI = {"family": "power", "a": 0.4}
PHI_OVERRIDES = {"growth_suite": {"family": "power", "a": 0.3}}

TOL_DEFAULTS = {
    "wellposed": {"cdc_min": 0.1, "trace_tol": 1e-8, "lower_slack": -1e-6,
                  "ratio_max": 50.0, "poles": 9},
    "illposed": {"gap_tol": 1e-9, "sep_frac": 0.4, "mass_tol": 0.06},
    "norm_equivalence": {"solution_band": 50.0, "boundary_band": 20.0,
                         "stability": 0.3, "doubling_max": 16.0},
    "cdc_sweep": {"min_ratio": 0.1},
    "measure_decay": {"alpha": 0.5, "exp_lo": 0.8, "exp_hi": 1.2,
                      "r2_min": 0.9, "ff_exp_tol": 0.1, "ff_r2_min": 0.95},
    "growth_suite": {"alpha": 0.5, "beta": 0.5, "slack_min": -1e-9,
                     "q1_expected": 5.0, "q1_tol": 1e-6},
    "campanato_equivalence": {"band": 20.0, "identity_tol": 1e-9, "p": 1},
}


class ExperimentConfig:
    """Validated experiment inputs; unknown ids are rejected immediately."""

    FIELDS = ("experiment", "domain", "coeff", "phi", "scales", "seed",
              "tolerances", "out")

    def __init__(self, experiment, domain=None, coeff=None, phi=None,
                 scales=None, seed=DEFAULT_SEED, tolerances=None, out=None):
        if experiment not in EXPERIMENTS:
            raise UnknownExperimentError(
                f"unknown experiment {experiment!r}; known: "
                + ", ".join(sorted(EXPERIMENTS)))
        self.experiment = experiment
        self.domain = DEFAULT_DOMAINS[experiment] if domain is None else domain
        self.coeff = coeff
        if phi is None:
            phi = PHI_OVERRIDES.get(experiment, DEFAULT_PHI)
        self.phi = phi
        self.scales = scales
        self.seed = int(seed)
        self.tolerances = dict(TOL_DEFAULTS[experiment])
        self.tolerances.update(tolerances or {})
        self.out = out

    @classmethod
    def from_dict(cls, cfg, experiment=None):
        cfg = dict(cfg)
        exp = experiment or cfg.pop("experiment", None)
        if exp is None:
            raise UnknownExperimentError("config carries no experiment id")
        cfg.pop("experiment", None)
        unknown = set(cfg) - set(cls.FIELDS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(exp, **cfg)

    def echo(self):
        return {"experiment": self.experiment, "domain": self.domain,
                "coeff": self.coeff, "phi": self.phi, "scales": self.scales,
                "seed": self.seed, "tolerances": self.tolerances,
                "out": self.out}


class PlotData:
    """Named x-y columns, plus enough styling hints to render blind."""

    def __init__(self, name, columns, xlabel="", ylabel="", logx=False,
                 logy=False, kind="line"):
        self.name = name
        self.columns = {k: np.asarray(v, dtype=float)
                        for k, v in columns.items()}
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.logx = logx
        self.logy = logy
        self.kind = kind


class RunReport:
    """Config echo, check rows, tables, plot data, and emitted artifacts."""

    def __init__(self, config, rows, tables, plots, wall_time, error=None):
        self.config = config
        self.rows = rows
        self.tables = tables          # name -> (fieldnames, list of dicts)
        self.plots = plots
        self.wall_time = wall_time
        self.error = error
        self.artifacts = []

    @property
    def passed(self):
        return bool(self.rows) and all(r["pass"] for r in self.rows)


def _row(rows, name, value, bound, ok, source, note=""):
    rows.append({"name": name, "value": float(value), "bound": float(bound),
                 "pass": bool(ok), "source": source, "note": note})


def _phi_of(cfg):
    return growth.GrowthFunction.from_config(cfg.phi)


def _data_alpha(phi):
    return phi.a if phi.family in ("power", "power_log") else FALLBACK_ALPHA


def _boundary_datum(dom, phi, anchor):
    """phi(|y - y0|) boundary data vanishing at the snapped anchor."""
    fid, y0 = dom.boundary_point_near(anchor)
    d = np.sqrt(((dom.boundary_centroids - y0) ** 2).sum(1))
    f = np.zeros(dom.n_faces)
    pos = d > 0
    f[pos] = phi(d[pos])
    return fid, y0, f


def _measure_row_table(row):
    return (["face_id", "x", "y", "z", "weight"], row.to_rows())


# -- the seven experiments --------------------------------------------------

def _run_wellposed(cfg, rows, tables, plots):
    dom = geo.build_domain(cfg.domain)
    phi = _phi_of(cfg)
    coeff = op_mod.CoefficientField.from_config(cfg.coeff)
    tol = cfg.tolerances
    mid = dom.origin + np.asarray(dom.interior.shape) * dom.h / 2
    anchor = mid.copy()
    anchor[-1] = dom.origin[-1]
    fid, y0, f = _boundary_datum(dom, phi, anchor)

    if dom.dim == 3:
        r = max(8 * dom.h, min(0.25, dom.boundary_extent / 4))
        cdc = cap.cdc_ratio(dom, y0, r, coeff=coeff)
        _row(rows, "cdc_ratio", cdc.ratio, tol["cdc_min"],
             cdc.ratio >= tol["cdc_min"], "capacity.cdc_ratio")

    op = op_mod.assemble(dom, coeff=coeff)
    u = op_mod.solve_dirichlet(dom, op=op, boundary_values=f)
    poles = ms.default_poles(dom, count=int(tol["poles"]), seed=cfg.seed)
    rep = ms.represent_solution(op, f, poles=poles)
    direct = np.array([u.values[dom.cell_id_at(p)] for p in rep.poles])
    err = float(np.abs(rep.values - direct).max())
    _row(rows, "trace_recovery", err, tol["trace_tol"],
         err <= tol["trace_tol"], "measure.represent_solution")

    fb, fu = norms.holder_trace_pair(u, phi)
    _row(rows, "holder_lower_bound", fu.value - fb.value, tol["lower_slack"],
         fu.value - fb.value >= tol["lower_slack"], "norms.holder_trace_pair")
    ratio = fu.value / fb.value if fb.value > 0 else float("inf")
    _row(rows, "holder_ratio", ratio, tol["ratio_max"],
         ratio <= tol["ratio_max"], "norms.holder_trace_pair")

    tables["measure_row"] = _measure_row_table(rep.rows[0])
    tables["representation_table"] = (
        ["pole_x", "pole_y", "pole_z", "error"],
        [{"pole_x": p[0], "pole_y": p[1],
          "pole_z": p[2] if dom.dim == 3 else 0.0,
          "error": abs(v - w)}
         for p, v, w in zip(rep.poles, rep.values, direct)])
    delta = dom.delta_at(rep.poles)
    plots.append(PlotData(
        "representation_error",
        {"pole_depth": np.atleast_1d(delta),
         "error": np.abs(rep.values - direct)},
        xlabel="distance to boundary", ylabel="|dual - direct|",
        logy=True, kind="scatter"))


def _run_illposed(cfg, rows, tables, plots):
    dom = geo.build_domain(cfg.domain)
    phi = _phi_of(cfg)
    op = op_mod.assemble(dom, coeff=op_mod.CoefficientField.from_config(cfg.coeff))
    tol = cfg.tolerances
    radius = float(cfg.domain.get("params", {}).get("radius", 1.0))
    fid, y0, f = _boundary_datum(dom, phi, [radius, 0.0, 0.0])
    if tol.get("constant_data") is not None:
        f = np.full(dom.n_faces, float(tol["constant_data"]))
    x0 = dom.boundary_point_near([-radius, 0.0, 0.0])[1]

    gap = ms.nonuniqueness_gap(op, f, x0, y0)
    delta_f = gap.delta_f
    scale = 1.0 + abs(delta_f)
    _row(rows, "identity_residual", gap.max_gap, tol["gap_tol"] * scale,
         gap.max_gap <= tol["gap_tol"] * scale, "measure.nonuniqueness_gap")

    probe = np.zeros(dom.dim)
    probe[0] = 2.0 * radius
    sep = abs(gap.separation_at(probe))
    if delta_f == 0.0:
        _row(rows, "separation", 0.0, 0.0, True,
             "measure.nonuniqueness_gap", note="solutions coincide")
    else:
        need = tol["sep_frac"] * abs(delta_f)
        _row(rows, "separation", sep, need, sep >= need,
             "measure.nonuniqueness_gap")

    mass = gap.mass_profile.values[dom.cell_id_at(probe)]
    _row(rows, "mass_at_probe", mass, tol["mass_tol"],
         abs(mass - 0.5) <= tol["mass_tol"], "measure.elliptic_measure_row",
         note="bound is |mass - 1/2|")

    dist = np.sqrt((dom.cell_centers ** 2).sum(1))
    diff = np.abs(gap.u_first.values - gap.u_second.values)
    edges = np.linspace(radius, dist.max(), 24)
    mids, vals = [], []
    for lo, hi in zip(edges, edges[1:]):
        sel = (dist >= lo) & (dist < hi)
        if sel.any():
            mids.append((lo + hi) / 2)
            vals.append(float(diff[sel].mean()))
    tables["separation_profile"] = (
        ["distance", "separation"],
        [{"distance": m, "separation": v} for m, v in zip(mids, vals)])
    plots.append(PlotData("separation_profile",
                          {"distance": mids, "separation": vals},
                          xlabel="|X|", ylabel="|u_x0 - u_y0|"))


def _run_norm_equivalence(cfg, rows, tables, plots):
    dom = geo.build_domain(cfg.domain)
    phi = _phi_of(cfg)
    tol = cfg.tolerances
    suite = norms.builtin_suite(dom, alpha=_data_alpha(phi))
    rep = norms.norm_equivalence_report(dom, phi, suite=suite)
    _row(rows, "cad_spot_check", 1.0 if rep.cad_ok else 0.0, 1.0, rep.cad_ok,
         "geometry.find_corkscrew")
    _row(rows, "sigma_doubling", rep.doubling, tol["doubling_max"],
         rep.doubling <= tol["doubling_max"],
         "geometry.surface_doubling_constant")
    for r in rep.rows:
        band = tol["solution_band"] if r.kind == "solution" \
            else tol["boundary_band"]
        excess = max(r.ratio, 1.0 / r.ratio) if r.ratio > 0 else float("inf")
        _row(rows, f"{r.name}_{r.kind}", excess, band, excess <= band,
             "norms.norm_equivalence_report")
    tables["equivalence_table"] = (
        ["name", "kind", "holder", "paired", "ratio", "flagged"],
        rep.to_rows())

    refine_h = tol.get("refine_h")
    if refine_h:
        fine_spec = dict(cfg.domain)
        fine_spec["h"] = float(refine_h)
        dom2 = geo.build_domain(fine_spec)
        suite2 = norms.builtin_suite(dom2, alpha=_data_alpha(phi))
        rep2 = norms.norm_equivalence_report(dom2, phi, suite=suite2)
        for a, b in zip(rep.rows, rep2.rows):
            drift = abs(b.ratio / a.ratio - 1.0)
            _row(rows, f"{a.name}_{a.kind}_stability", drift,
                 tol["stability"], drift <= tol["stability"],
                 "norms.norm_equivalence_report")
        tables["equivalence_table_fine"] = (
            ["name", "kind", "holder", "paired", "ratio", "flagged"],
            rep2.to_rows())
    idx = np.arange(len(rep.rows) // 2)
    plots.append(PlotData(
        "equivalence_ratios",
        {"entry": idx,
         "carleson_holder": [r.ratio for r in rep.rows if r.kind == "solution"],
         "campanato_holder": [r.ratio for r in rep.rows if r.kind == "boundary"]},
        xlabel="suite entry", ylabel="ratio", logy=True, kind="scatter"))


def _run_cdc_sweep(cfg, rows, tables, plots):
    dom = geo.build_domain(cfg.domain)
    tol = cfg.tolerances
    scales = cfg.scales or [8 * dom.h]
    sample = tol.get("sample", "stride:16")
    rep = cap.cdc_sweep(dom, scales, sample=sample,
                        coeff=op_mod.CoefficientField.from_config(cfg.coeff))
    _row(rows, "inf_ratio", rep.inf_ratio, tol["min_ratio"],
         rep.inf_ratio >= tol["min_ratio"], "capacity.cdc_sweep")
    tables["cdc_table"] = (["x_id", "r", "cap_num", "cap_den", "ratio"],
                           rep.to_rows())
    per_scale = {}
    for _, r, _, _, ratio in rep.rows:
        per_scale.setdefault(r, []).append(ratio)
    xs = sorted(per_scale)
    plots.append(PlotData(
        "cdc_ratio_by_scale",
        {"r": xs,
         "min_ratio": [min(per_scale[x]) for x in xs],
         "max_ratio": [max(per_scale[x]) for x in xs]},
        xlabel="r", ylabel="capacity ratio", logx=True))


def _run_measure_decay(cfg, rows, tables, plots):
    dom = geo.build_domain(cfg.domain)
    phi = _phi_of(cfg)
    op = op_mod.assemble(dom, coeff=op_mod.CoefficientField.from_config(cfg.coeff))
    tol = cfg.tolerances
    if dom.is_exterior:
        _far_field_half(cfg, dom, op, rows, tables, plots)
        return
    mid = dom.origin + np.asarray(dom.interior.shape) * dom.h / 2
    anchor = mid.copy()
    anchor[-1] = dom.origin[-1]
    x = dom.boundary_point_near(anchor)[1]
    scales = cfg.scales or [2 * dom.h, 4 * dom.h]
    rep = ms.decay_profile(op, x, scales, alpha=tol["alpha"], phi=phi,
                           pole_depths=(1, 2, 3, 4, 6))
    _row(rows, "decay_exponent_lower", rep.fit.exponent, tol["exp_lo"],
         rep.fit.exponent >= tol["exp_lo"], "measure.decay_profile")
    _row(rows, "decay_exponent_upper", rep.fit.exponent, tol["exp_hi"],
         rep.fit.exponent <= tol["exp_hi"], "measure.decay_profile")
    _row(rows, "decay_fit_r2", rep.fit.r_squared, tol["r2_min"],
         rep.fit.r_squared >= tol["r2_min"], "measure.decay_profile")
    tables["decay_table"] = (["scale", "pole_distance", "mass", "bound"],
                             rep.to_rows())
    rel = [r["pole_distance"] / r["scale"] for r in rep.to_rows()]
    plots.append(PlotData(
        "decay_profile",
        {"relative_depth": rel,
         "mass": [r["mass"] for r in rep.to_rows()],
         "bound": [r["bound"] for r in rep.to_rows()]},
        xlabel="pole depth / r", ylabel="mass outside 4r",
        logx=True, logy=True, kind="scatter"))


def _bisector_poles(a, depths):
    """Points with |X - a| = |X|: on the bisector plane of 0 and a."""
    a = np.asarray(a, dtype=float)
    foot = a / 2
    seed = np.zeros_like(a)
    seed[(np.argmax(np.abs(a)) + 1) % a.size] = 1.0
    e1 = seed - (seed @ a) / (a @ a) * a
    e1 /= np.linalg.norm(e1)
    out = []
    for d in depths:
        t = np.sqrt(max(d * d - foot @ foot, 0.0))
        out.append(foot + t * e1)
    return out


def _far_field_half(cfg, dom, op, rows, tables, plots):
    tol = cfg.tolerances
    radius = float(cfg.domain.get("params", {}).get("radius", 1.0))
    r_out = float(cfg.domain.get("params", {}).get("r_out", 8.0))
    a = dom.boundary_point_near([radius, 0.0, 0.0])[1]
    r = cfg.scales[0] if cfg.scales else 1.05 * (2 * radius)
    depths = np.array([0.45, 0.55, 0.65, 0.8]) * r_out
    rep = ms.far_field_decay(op, a, r, _bisector_poles(a, depths))
    _row(rows, "far_field_exponent", rep.fit.exponent, tol["ff_exp_tol"],
         abs(rep.fit.exponent + 1.0) <= tol["ff_exp_tol"],
         "measure.far_field_decay", note="bound is |exponent + 1|")
    _row(rows, "far_field_fit_r2", rep.fit.r_squared, tol["ff_r2_min"],
         rep.fit.r_squared >= tol["ff_r2_min"], "measure.far_field_decay")
    tables["far_field_table"] = (
        ["pole_distance", "ratio", "mass", "total_mass"], rep.to_rows())
    plots.append(PlotData(
        "far_field_decay",
        {"pole_distance": [r_["pole_distance"] for r_ in rep.to_rows()],
         "mass": [r_["mass"] for r_ in rep.to_rows()]},
        xlabel="|X|", ylabel="window mass", logx=True, logy=True,
        kind="scatter"))


def _run_growth_suite(cfg, rows, tables, plots):
    phi = _phi_of(cfg)
    tol = cfg.tolerances
    lo, hi, n = cfg.scales or (1e-4, 1e4, 200)
    grid = np.logspace(np.log10(lo), np.log10(hi), int(n))
    rep = growth.verify_growth_lemmas(phi, tol["alpha"], tol["beta"], grid)
    for check in rep.checks:
        _row(rows, check.check_id, check.slack, tol["slack_min"],
             check.slack >= tol["slack_min"], "growth.verify_growth_lemmas")
    _row(rows, "class_constant_finite", rep.c_phi, np.inf,
         np.isfinite(rep.c_phi), "growth.check_class_membership")
    if tol.get("q1_expected") is not None:   # null in the config skips it
        q1 = growth.tail_transform(phi, tol["alpha"], 1.0)
        _row(rows, "tail_transform_at_one", q1, tol["q1_tol"],
             abs(q1 - tol["q1_expected"]) <= tol["q1_tol"],
             "growth.tail_transform", note=f"expected {tol['q1_expected']}")
    tables["lemma_table"] = (["check_id", "worst_t", "slack", "pass"],
                             rep.to_rows())
    qs = np.atleast_1d(growth.tail_transform(phi, tol["alpha"], grid))
    plots.append(PlotData(
        "growth_curves",
        {"t": grid, "phi": np.asarray(phi(grid)), "tail_transform": qs},
        xlabel="t", ylabel="value", logx=True, logy=True))


def _run_campanato_equivalence(cfg, rows, tables, plots):
    dom = geo.build_domain(cfg.domain)
    phi = _phi_of(cfg)
    tol = cfg.tolerances
    p = tol["p"]
    suite = norms.builtin_suite(dom, alpha=_data_alpha(phi))
    out = []
    for name, f, _ in suite:
        hol = norms.holder_seminorm(dom.boundary_centroids, f, phi)
        camp = norms.campanato_norm(dom, f, phi, p=p)
        ratio = camp.value / hol.value if hol.value > 0 else float("nan")
        excess = max(ratio, 1.0 / ratio) if ratio > 0 else float("inf")
        _row(rows, f"{name}_band", excess, tol["band"], excess <= tol["band"],
             "norms.campanato_norm")
        out.append({"name": name, "holder": hol.value,
                    "campanato": camp.value, "ratio": ratio})
    f0 = suite[0][1]
    camp0 = norms.campanato_norm(dom, f0, phi, p=p, stride=1).value
    alt = max(norms.oscillation(dom, f0, r, p=p) / phi(r)
              for r in norms._dyadic_scales(dom))
    diff = abs(camp0 - alt) / max(1.0, camp0)
    _row(rows, "oscillation_identity", diff, tol["identity_tol"],
         diff <= tol["identity_tol"], "norms.oscillation")
    tables["campanato_table"] = (["name", "holder", "campanato", "ratio"], out)
    plots.append(PlotData(
        "campanato_ratios",
        {"entry": np.arange(len(out)),
         "ratio": [r["ratio"] for r in out]},
        xlabel="suite entry", ylabel="campanato / holder", kind="scatter"))


EXPERIMENTS = {
    "wellposed": (_run_wellposed,
                  "cube Dirichlet solve: trace recovery and Holder bounds"),
    "illposed": (_run_illposed,
                 "exterior-domain nonuniqueness gap and separation"),
    "norm_equivalence": (_run_norm_equivalence,
                         "Carleson/Holder and Campanato/Holder ratio suite"),
    "cdc_sweep": (_run_cdc_sweep,
                  "capacity density ratios over boundary points and scales"),
    "measure_decay": (_run_measure_decay,
                      "elliptic measure decay profile (interior or far-field)"),
    "growth_suite": (_run_growth_suite,
                     "growth-function calculus checks on a log grid"),
    "campanato_equivalence": (_run_campanato_equivalence,
                              "boundary Campanato vs Holder comparison"),
}


def run_experiment(config):
    """Run one experiment; module failures become failure rows, not crashes."""
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    rows, tables, plots = [], {}, []
    start = time.time()
    error = None
    try:
        EXPERIMENTS[config.experiment][0](config, rows, tables, plots)
    except (geo.SpecParseError, ValueError, ArithmeticError,
            op_mod.NoConvergenceError) as exc:
        error = exc
        _row(rows, "experiment_error", float("nan"), float("nan"), False,
             f"experiments.{config.experiment}", note=repr(exc))
    return RunReport(config.echo(), rows, tables, plots,
                     time.time() - start, error=error)


# -- persistence ------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool) or isinstance(v, np.bool_):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, fieldnames, dicts):
    lines = [",".join(fieldnames)]
    lines += [",".join(_fmt(row[k]) for k in fieldnames) for row in dicts]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_report(report, directory):
    """Write run.json, per-table CSVs, plotdata CSVs, and rendered figures."""
    import os

    os.makedirs(directory, exist_ok=True)
    plot_dir = os.path.join(directory, "plotdata")
    if report.plots:
        os.makedirs(plot_dir, exist_ok=True)
    manifest = []
    for name, (fields, dicts) in report.tables.items():
        path = os.path.join(directory, f"{name}.csv")
        _write_csv(path, fields, dicts)
        manifest.append(path)
    for plot in report.plots:
        path = os.path.join(plot_dir, f"{plot.name}.csv")
        cols = list(plot.columns)
        n = len(plot.columns[cols[0]])
        dicts = [{c: plot.columns[c][i] for c in cols} for i in range(n)]
        _write_csv(path, cols, dicts)
        manifest.append(path)
    from . import figures
    manifest += figures.render(report, os.path.join(directory, "figures"))

    report.artifacts = manifest + [os.path.join(directory, "run.json")]
    blob = {"experiment": report.config["experiment"],
            "config": report.config,
            "pass": report.passed,
            "rows": report.rows,
            "artifacts": report.artifacts,
            "wall_time": report.wall_time}
    path = os.path.join(directory, "run.json")
    with open(path, "w") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True, default=_fmt)
        fh.write("\n")
    return report.artifacts
