"""Monte Carlo campaigns with CSV/JSON reports and PASS/FAIL verdicts."""

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Experiment
from .hierarchy import identity_check, limiting_psi
from .ideal import simulate_ideal
from .increments import EnsembleKind
from .limits import simulate_limit
from .linalg import transmission_spectrum
from .micro import (
    Distribution,
    accumulate_Z_batch,
    evolve_A_batch,
    exceptional_pairs,
    predicted_variance,
    scaling_ratio,
    solve_dispersion,
)
from .simulate import simulate_eigenvalues
from .stats import correlation_matrix, ks_two_sample, mc_estimate

CSV_HEADER = ["observable", "s", "N", "beta", "kind", "mean", "stderr", "var", "var_stderr",
              "nsamples", "seed"]
EIGEN = "EIGEN_SDE"
MICRO = "MICRO"


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tolerance: str
    passed: bool


@dataclass
class ExperimentResult:
    experiment: Experiment
    seed: int
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def verdict(self):
        return "PASS" if self.passed else "FAIL"

    def add(self, values, name, s, n, beta, kind):
        summary = mc_estimate(values, name, s, {"N": n, "beta": beta, "kind": kind})
        self.rows.append(summary)
        return summary

    def check(self, name, value, tolerance, passed):
        self.checks.append(Check(name, float(value), tolerance, bool(passed)))

    def find(self, name, s=None, **meta):
        for r in self.rows:
            if r.name == name and (s is None or np.isclose(r.s, s)) and all(
                    r.meta.get(k) == v for k, v in meta.items()):
                return r
        raise KeyError((name, s, meta))


def run_experiment(cfg):
    runner = {
        Experiment.OHM: _run_ohm,
        Experiment.UCF: _run_ucf,
        Experiment.COVARIANCE: _run_covariance,
        Experiment.COMPARE_B2: _run_compare_b2,
        Experiment.MICRO_SCALING: _run_micro_scaling,
        Experiment.HIERARCHY_CHECK: _run_hierarchy,
    }[cfg.experiment]
    result = ExperimentResult(cfg.experiment, int(cfg.master_seed))
    runner(cfg, result)
    return result


def _eigen(cfg, beta, n, s_points):
    return simulate_eigenvalues(beta, n, s_points, int(cfg.n_trajectories), int(cfg.master_seed),
                                ds=cfg.ds, block_size=int(cfg.block_size),
                                threads=int(cfg.threads))


def monotone_decrease(devs, ses, n_se):
    """Each step may rise by at most n_se combined SE; last must be below first."""
    ok = all(devs[i + 1] <= devs[i] + n_se * math.hypot(ses[i], ses[i + 1])
             for i in range(len(devs) - 1))
    return ok and devs[-1] < devs[0]


def _run_ohm(cfg, res):
    beta = cfg.beta
    ladder = list(cfg.n_ladder)
    devs = {s: [] for s in cfg.s_grid}
    ses = {s: [] for s in cfg.s_grid}
    for n in ladder:
        t = _eigen(cfg, beta, n, cfg.s_grid)
        g = t.sum(axis=-1)
        for j, s in enumerate(cfg.s_grid):
            for p in cfg.p_values:
                r = res.add((g[:, j] / n) ** p, f"g^{p}/N^{p}", s, n, beta, EIGEN)
                if p == 1:
                    devs[s].append(abs(r.mean - float(limiting_psi(1, s))))
                    ses[s].append(r.stderr)
    n_se = cfg.tol("n_se")
    inv_n = 1.0 / np.array(ladder, dtype=float)
    for s in cfg.s_grid:
        d = np.array(devs[s])
        res.info[f"fitted_C_s={s:g}"] = float(np.dot(d, inv_n) / np.dot(inv_n, inv_n))
        res.check(f"|E(g)/N - 1/(1+s)| decreases with N at s={s:g}", d[-1],
                  f"steps <= +{n_se:g} SE, last < first", monotone_decrease(d, ses[s], n_se))
    cn, cs = int(cfg.tol("check_n")), float(cfg.tol("check_s"))
    if cn in ladder and any(np.isclose(cs, s) for s in cfg.s_grid):
        s_key = next(s for s in cfg.s_grid if np.isclose(cs, s))
        dev = devs[s_key][ladder.index(cn)]
        res.check(f"|E(g)/N - 1/(1+s)| at N={cn}, s={cs:g}", dev,
                  f"<= {cfg.tol('max_dev'):g}", dev <= cfg.tol("max_dev"))


def _run_ucf(cfg, res):
    n = int(cfg.n)
    var = {}
    for beta in cfg.betas:
        g = _eigen(cfg, beta, n, cfg.s_grid).sum(axis=-1)
        for j, s in enumerate(cfg.s_grid):
            r = res.add(g[:, j], "g", s, n, beta, EIGEN)
            var[(beta, s)] = r
    s0 = next((s for s in cfg.s_grid if np.isclose(s, cfg.tol("check_s"))), None)
    if s0 is None:
        res.check("check_s present in s_grid", cfg.tol("check_s"), "in s_grid", False)
        return
    lo, hi = cfg.tol("var_lo"), cfg.tol("var_hi")
    for s in cfg.s_grid:
        for beta in cfg.betas:
            res.info[f"Var(g) beta={beta} s={s:g}"] = var[(beta, s)].var
            res.info[f"Var(g) target 2/(15 beta) beta={beta}"] = 2.0 / (15.0 * beta)
    if 2 in cfg.betas:
        v2 = var[(2, s0)].var
        res.check(f"Var(g) beta=2 at s={s0:g}", v2, f"in [{lo:g}, {hi:g}]", lo <= v2 <= hi)
        if 1 in cfg.betas:
            ratio = var[(1, s0)].var / v2
            rel = cfg.tol("ratio_rel")
            res.check(f"Var(g) beta=1 / Var(g) beta=2 at s={s0:g}", ratio,
                      f"2 within {rel:.0%}", abs(ratio / 2.0 - 1.0) <= rel)


def _run_covariance(cfg, res):
    geom = cfg.geometry()
    lam = float(cfg.lam)
    s = float(cfg.s_grid[-1])
    m = int(cfg.n_trajectories)
    dist = Distribution(str(cfg.distribution).upper())
    chunk = 1000
    z = np.concatenate([
        accumulate_Z_batch(geom, lam, s, range(i, min(i + chunk, m)), int(cfg.master_seed),
                           dist, max_layers=cfg.max_layers)
        for i in range(0, m, chunk)])
    dim = 2 * geom.n
    flat = z.reshape(m, dim * dim)
    disp = solve_dispersion(geom)
    for a in range(dim * dim):
        i, j = divmod(a, dim)
        res.add(np.abs(flat[:, a]) ** 2, f"|Z[{i},{j}]|^2", s, geom.n, 2 - geom.time_reversal,
                MICRO)
    parts = np.concatenate([flat.real, flat.imag], axis=1)
    se = parts.std(axis=0, ddof=1) / np.sqrt(m)
    mean_z = float(np.max(np.abs(parts.mean(axis=0)) / np.where(se > 0, se, np.inf)))
    centered = flat - flat.mean(axis=0)
    var = np.mean(np.abs(centered) ** 2, axis=0)
    pred_y = predicted_variance(geom, s, disp).ravel()
    pred_z = s / ((4.0 - geom.energy**2) * geom.n)
    rel_y = np.abs(var / pred_y - 1.0)
    res.info["var_rel_dev_Y_max"] = float(rel_y.max())
    res.info["var_rel_dev_Z_max"] = float(np.abs(var / pred_z - 1.0).max())
    res.info["lambda^2/cha"] = float(scaling_ratio(geom, lam))
    res.info["cha"] = float(disp.cha)
    corr = correlation_matrix(centered)
    np.fill_diagonal(corr, 0.0)
    exc = exceptional_pairs(geom)
    diag = [a * dim + a for a in range(geom.n)]      # diagonal of the (++) block
    diag_corr = min((corr[a, b] for a in diag for b in diag if a != b), default=1.0)
    nonexc = corr[~exc & ~np.eye(dim * dim, dtype=bool)]
    nonexc_max = float(nonexc.max()) if nonexc.size else 0.0
    thr = cfg.tol("exc_threshold")
    res.info["n_exceptional_pairs_predicted"] = int(exc.sum() // 2)
    res.info["n_pairs_above_threshold"] = int((corr > thr).sum() // 2)
    res.check("max |E[Z_mn]| / SE (real and imaginary parts)", mean_z,
              f"<= {cfg.tol('mean_n_se'):g}", mean_z <= cfg.tol("mean_n_se"))
    res.check("max |Var(Z_mn) / (s/(N|v_m v_n|)) - 1|", rel_y.max(),
              f"<= {cfg.tol('var_rel'):g}", rel_y.max() <= cfg.tol("var_rel"))
    res.check("min a-diagonal pair correlation", diag_corr, f">= {cfg.tol('diag_corr_min'):g}",
              diag_corr >= cfg.tol("diag_corr_min"))
    res.check("max non-exceptional pair correlation", nonexc_max,
              f"<= {cfg.tol('nonexc_corr_max'):g}", nonexc_max <= cfg.tol("nonexc_corr_max"))
    res.check(f"pairs with |corr| > {thr:g} equal the exceptional set", (corr > thr).sum() // 2,
              "exact match", bool(np.array_equal(corr > thr, exc)))


def _run_compare_b2(cfg, res):
    n = int(cfg.n)
    seed = int(cfg.master_seed)
    kw = dict(ds=cfg.ds, policy=cfg.policy, block_size=min(int(cfg.block_size), 128),
              threads=int(cfg.threads))
    ideal = simulate_ideal(2, n, cfg.s_grid, int(cfg.n_trajectories), seed, **kw)
    lim = simulate_limit(EnsembleKind.LIMIT_Z_GAMMA, n, cfg.energy, cfg.s_grid,
                         int(cfg.n_trajectories), seed, unit_mfp=True, **kw)
    n_se = cfg.tol("n_se")
    for j, s in enumerate(cfg.s_grid):
        a = res.add(ideal.g[:, j], "g", s, n, 2, EnsembleKind.IDEAL_B2.value)
        b = res.add(lim.g[:, j], "g", s, n, 2, EnsembleKind.LIMIT_Z_GAMMA.value)
        diff = b.mean - a.mean
        se = math.hypot(a.stderr, b.stderr)
        res.check(f"E[g] LIMIT_Z_GAMMA - IDEAL_B2 at s={s:g}", diff, f"|.| <= {n_se:g} SE "
                  f"({n_se * se:.3g})", abs(diff) <= n_se * se)
    ks = ks_two_sample(ideal.g[:, -1], lim.g[:, -1], cfg.tol("ks_alpha"))
    res.info["ks_pvalue"] = ks.pvalue
    res.check(f"KS statistic on g at s={cfg.s_grid[-1]:g}", ks.statistic,
              f"< {ks.critical:.6g} (alpha={ks.alpha:g})", ks.passes)
    if str(cfg.policy).upper() == "EXP":
        pu = max(ideal.pu_defect.max(), lim.pu_defect.max())
        res.check("max pseudo-unitarity defect", pu, f"<= {cfg.tol('pu_defect'):g}",
                  pu <= cfg.tol("pu_defect"))


def micro_g(geom, lam, s_grid, m, seed, distribution, max_layers, batch=250):
    """Conductance of the microscopic transfer matrix, shape (m, len(s_grid))."""
    out = np.empty((m, len(s_grid)))
    for lo in range(0, m, batch):
        idx = range(lo, min(lo + batch, m))
        path = evolve_A_batch(geom, lam, s_grid, idx, seed, distribution, max_layers=max_layers)
        for j, f in enumerate(path.factored):
            out[lo:idx.stop, j] = transmission_spectrum(f).g
    return out


def _run_micro_scaling(cfg, res):
    lams = sorted(cfg.lambdas, reverse=True)
    seed = int(cfg.master_seed)
    m = int(cfg.n_trajectories)
    n = int(cfg.geometry_n)
    dist = Distribution(str(cfg.distribution).upper())
    ratios = []
    micro = {}
    for lam in lams:
        geom = cfg.geometry(lam)
        ratios.append(scaling_ratio(geom, lam))
        g = micro_g(geom, lam, cfg.s_grid, m, seed, dist, cfg.max_layers)
        for j, s in enumerate(cfg.s_grid):
            micro[(lam, s)] = res.add(g[:, j], "g", s, n, 2 - geom.time_reversal,
                                      f"{MICRO}_lambda={lam:g}")
    # velocity-weighted limit law at the finest geometry
    geom = cfg.geometry(lams[-1])
    kind = EnsembleKind.LIMIT_Y_0 if geom.time_reversal else EnsembleKind.LIMIT_Y_GAMMA
    lim = simulate_limit(kind, n, cfg.energy, cfg.s_grid, m, seed, ds=cfg.ds, policy=cfg.policy,
                         velocities=solve_dispersion(geom),
                         block_size=min(int(cfg.block_size), 128), threads=int(cfg.threads))
    n_se = cfg.tol("n_se")
    for lam, r in zip(lams, ratios):
        res.info[f"lambda^2/cha lambda={lam:g}"] = float(r)
    res.check("lambda^2/cha decreases along the schedule", ratios[-1], "strictly decreasing",
              all(b < a for a, b in zip(ratios, ratios[1:])))
    for j, s in enumerate(cfg.s_grid):
        b = res.add(lim.g[:, j], "g", s, n, kind.beta, kind.value)
        a = micro[(lams[-1], s)]
        diff = a.mean - b.mean
        se = math.hypot(a.stderr, b.stderr)
        for lam in lams:
            res.info[f"E[g] micro - limit lambda={lam:g} s={s:g}"] = micro[(lam, s)].mean - b.mean
        res.check(f"E[g] micro(lambda={lams[-1]:g}) - {kind.value} at s={s:g}", diff,
                  f"|.| <= {n_se:g} SE ({n_se * se:.3g})", abs(diff) <= n_se * se)


def _run_hierarchy(cfg, res):
    s = float(cfg.s_grid[0])
    d = float(cfg.delta)
    n = int(cfg.n)
    n_se = cfg.tol("n_se")
    for beta in cfg.betas:
        t = _eigen(cfg, beta, n, [s - d, s, s + d])
        for p in cfg.p_values:
            chk = identity_check(t[:, 0], t[:, 1], t[:, 2], d, p, beta)
            g_lo, g_hi = t[:, 0].sum(-1) ** p, t[:, 2].sum(-1) ** p
            res.add((g_hi - g_lo) / (2 * d), f"dE(g^{p})/ds central", s, n, beta, EIGEN)
            res.add(_rhs(t[:, 1], p, beta), f"hierarchy rhs p={p}", s, n, beta, EIGEN)
            res.info[f"z beta={beta} p={p}"] = chk.z
            res.check(f"hierarchy identity beta={beta} N={n} p={p} s={s:g}", chk.diff,
                      f"|.| <= {n_se:g} paired SE ({n_se * chk.diff_stderr:.3g})",
                      chk.passes(n_se))


def _rhs(t, p, beta):
    from .hierarchy import hierarchy_rhs_samples, moment_samples
    return hierarchy_rhs_samples(p, beta, t.shape[-1], moment_samples(t, p))


# -- reports ----------------------------------------------------------------------

def fmt(x):
    """Floats with 17 significant digits; other values via str."""
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def csv_text(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in result.rows:
        w.writerow([r.name, fmt(float(r.s)), r.meta["N"], r.meta["beta"], r.meta["kind"],
                    fmt(r.mean), fmt(r.stderr), fmt(r.var), fmt(r.var_stderr), r.n,
                    result.seed])
    return buf.getvalue()


def _json(obj, indent=0):
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json(str(k))}: {_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return "%.17g" % x
        return '"inf"' if x > 0 else ('"-inf"' if x < 0 else '"nan"')
    s = str(obj).replace("\\", "\\\\").replace('"', '\\"')
    return f'"{s}"'


def json_text(result, cfg=None):
    body = {
        "experiment": result.experiment.value,
        "seed": result.seed,
        "verdict": result.verdict,
        "checks": [{"name": c.name, "value": c.value, "tolerance": c.tolerance,
                    "pass": c.passed} for c in result.checks],
        "info": result.info,
        "rows": [{"observable": r.name, "s": r.s, "N": r.meta["N"], "beta": r.meta["beta"],
                  "kind": r.meta["kind"], "mean": r.mean, "stderr": r.stderr, "var": r.var,
                  "var_stderr": r.var_stderr, "nsamples": r.n} for r in result.rows],
    }
    if cfg is not None:
        body["tolerances"] = dict(cfg.tolerances)
    return _json(body) + "\n"


def write_report(result, out_dir, cfg=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = result.experiment.value.lower()
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    csv_path.write_text(csv_text(result), encoding="utf-8")
    json_path.write_text(json_text(result, cfg), encoding="utf-8")
    return csv_path, json_path
