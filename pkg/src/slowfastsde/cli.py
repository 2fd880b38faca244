"""Command-line experiment runner.

Each subcommand loads the experiment configuration (defaults if --config is
omitted), runs one pipeline stage, and writes plot-ready CSV files plus a
single JSON summary into the output directory.  Identical configuration and
seeds produce byte-identical outputs; see docs/output_formats.md for the
file schemas.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import click
import numpy as np

from .averaging import (AveragedDriftTable, averaged_drift_ergodic,
                        averaged_drift_measure, averaging_error_study,
                        build_drift_table, solve_averaged_ode)
from .benchmarks import (ou_random_periodic_oracle, toy_averaged_drift,
                         toy_fast_variance, toy_section_mean)
from .config import load_config
from .diagnostics import (clipped_identity, coupling_rate,
                          dissipativity_constants, hormander_rank,
                          semigroup_continuity_probe, sigma_column_fields)
from .errors import ConfigError, Error
from .measures import (CylinderBox, CylinderMetric, bl_distance,
                       krylov_bogolyubov_curve, section_measures, time_average)
from .noise import derive_seed, make_path
from .output import write_csv, write_json_summary
from .pullback import pullback_solve, verify_random_periodicity
from .sde_core import simulate_slow_fast


def _common(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="TOML experiment file.")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default=None,
                      help="Output directory (overrides run.out_dir).")(fn)
    fn = click.option("--workers", type=int, default=None,
                      help="Worker pool size (overrides run.workers).")(fn)
    fn = click.option("--seed-offset", type=int, default=0,
                      help="Shift every resolved seed for replication runs.")(fn)
    return fn


def _load(config_path, out_dir, workers, seed_offset):
    try:
        return load_config(config_path, seed_offset=seed_offset,
                           out_dir=out_dir, workers=workers)
    except ConfigError as exc:
        raise click.ClickException("configuration invalid: %s" % exc)


def _run(stage, thunk):
    """Run one pipeline stage; toolkit errors exit nonzero naming the stage."""
    try:
        return thunk()
    except (Error, ValueError) as exc:
        raise click.ClickException("stage %r failed: %s" % (stage, exc))


def _pool_map(workers, fn, items):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _out(cfg, name):
    return os.path.join(cfg.out_dir, name)


@click.group()
def main():
    """Slow-fast SDE simulation and verification toolkit."""


@main.command()
@_common
def simulate(config_path, out_dir, workers, seed_offset):
    """Coupled slow-fast trajectories over [0, T/epsilon]."""
    cfg = _load(config_path, out_dir, workers, seed_offset)
    system = _run("simulate", cfg.build_system)

    def body():
        path = make_path(cfg.seeds["simulate"], cfg.dt, system.noise_dim)
        x0 = np.array(cfg.x0, dtype=float)
        y0 = np.zeros(system.fast_dim)
        horizon = cfg.T / cfg.epsilon
        slow, fast = simulate_slow_fast(system, x0, y0, path, horizon)
        return slow, fast

    slow, fast = _run("simulate", body)
    ts = slow.times
    write_csv(_out(cfg, "slow_path.csv"),
              ["t"] + ["x_%d" % (i + 1) for i in range(system.slow_dim)],
              (tuple([float(t)] + list(map(float, row)))
               for t, row in zip(ts, slow.states)))
    write_csv(_out(cfg, "fast_path.csv"),
              ["t"] + ["y_%d" % (i + 1) for i in range(system.fast_dim)],
              (tuple([float(t)] + list(map(float, row)))
               for t, row in zip(ts, fast.states)))
    write_json_summary(_out(cfg, "simulate_summary.json"), "simulate", cfg, {
        "system": system.name,
        "horizon": cfg.T / cfg.epsilon,
        "final_slow": slow.final_state,
        "final_fast": fast.final_state,
    })
    click.echo("simulate: %d steps written" % (len(slow.states) - 1))


@main.command()
@_common
def pullback(config_path, out_dir, workers, seed_offset):
    """Random periodic solution of the fast subsystem by pullback."""
    cfg = _load(config_path, out_dir, workers, seed_offset)
    system = _run("pullback", cfg.build_system)
    b = cfg.budgets

    def body():
        path = make_path(cfg.seeds["pullback"], cfg.dt, system.noise_dim)
        est = pullback_solve(system, np.array(cfg.x0), np.zeros(system.fast_dim),
                             path, k_max=b["k_max"], tol=b["tol"])
        report = verify_random_periodicity(est, system, path, tol=10 * b["tol"])
        return est, report

    est, report = _run("pullback", body)
    write_csv(_out(cfg, "pullback_iterates.csv"), ["k", "sup_diff"],
              ((k + 2, float(d)) for k, d in enumerate(est.sup_diffs)))
    write_csv(_out(cfg, "pullback_solution.csv"),
              ["r"] + ["y_%d" % (i + 1) for i in range(system.fast_dim)],
              (tuple([float(r)] + list(map(float, v)))
               for r, v in zip(est.r_grid, est.values)))
    write_json_summary(_out(cfg, "pullback_summary.json"), "pullback", cfg, {
        "converged": est.converged,
        "k_used": est.k_used,
        "rate_estimate": est.rate_estimate,
        "residual_shift": report.residual_shift,
        "residual_flow": report.residual_flow,
        "periodicity_passed": report.passed,
    })
    click.echo("pullback: converged=%s k_used=%d rate=%.4g"
               % (est.converged, est.k_used, est.rate_estimate))


@main.command()
@_common
def measure(config_path, out_dir, workers, seed_offset):
    """Empirical periodic measures on sections and their d_BL table."""
    cfg = _load(config_path, out_dir, workers, seed_offset)
    system = _run("measure", cfg.build_system)
    b = cfg.budgets

    def body():
        return section_measures(system, np.array(cfg.x0), b["n_sections"],
                                b["n_samples"], seed=cfg.seeds["measure"],
                                k_max=b["k_max"], tol=b["tol"], dt=cfg.dt)

    sections = _run("measure", body)
    rows = []
    for m in sections:
        for s, y, w in zip(m.phases, m.points, m.weights):
            rows.append(tuple([float(s)] + list(map(float, y)) + [float(w)]))
    write_csv(_out(cfg, "measures.csv"),
              ["s"] + ["y_%d" % (i + 1) for i in range(system.fast_dim)]
              + ["weight"], rows)

    metric = CylinderMetric(system.tau)
    pairs = [(i, j) for i in range(len(sections))
             for j in range(i + 1, len(sections))]
    dists = _run("measure", lambda: _pool_map(
        cfg.workers,
        lambda ij: bl_distance(sections[ij[0]], sections[ij[1]], metric),
        pairs))
    write_csv(_out(cfg, "bl_distances.csv"),
              ["i", "j", "r_i", "r_j", "d_bl"],
              ((i, j, float(sections[i].phases[0]), float(sections[j].phases[0]),
                float(d)) for (i, j), d in zip(pairs, dists)))
    write_json_summary(_out(cfg, "measure_summary.json"), "measure", cfg, {
        "n_sections": len(sections),
        "atoms_per_section": [m.n_atoms for m in sections],
        "section_means": [m.mean() for m in sections],
        "section_vars": [m.var() for m in sections],
        "max_pairwise_d_bl": max(dists) if dists else 0.0,
    })
    click.echo("measure: %d sections, max pairwise d_BL %.4g"
               % (len(sections), max(dists) if dists else 0.0))


@main.command()
@_common
def ergodicity(config_path, out_dir, workers, seed_offset):
    """Occupation-frequency convergence to section masses (ergodic check)."""
    cfg = _load(config_path, out_dir, workers, seed_offset)
    system = _run("ergodicity", cfg.build_system)
    b = cfg.budgets

    def body():
        sections = section_measures(system, np.array(cfg.x0), b["n_sections"],
                                    b["n_samples"], seed=cfg.seeds["ergodicity"],
                                    k_max=b["k_max"], tol=b["tol"], dt=cfg.dt)
        bar = time_average(sections)
        med = float(np.median(bar.points[:, 0]))
        lo, hi = np.quantile(bar.points[:, 0], [0.25, 0.75])
        inf = np.full(system.fast_dim, np.inf)
        y_med = inf.copy()
        y_med[0] = med
        y_lo = -inf.copy()
        y_lo[0] = float(lo)
        y_hi = inf.copy()
        y_hi[0] = float(hi)
        boxes = [CylinderBox(0.0, system.tau, -inf, y_med),
                 CylinderBox(0.0, system.tau, y_lo, y_hi)]
        curve = krylov_bogolyubov_curve(
            system, np.array(cfg.x0), boxes, m_max=b["m_max"],
            seed=cfg.seeds["ergodicity"], n_orbits=b["n_orbits"],
            n_sections=b["n_sections"], n_samples=b["n_samples"],
            k_max=b["k_max"], tol=b["tol"], dt=cfg.dt)
        return curve

    curve = _run("ergodicity", body)
    rows = []
    for bi in range(len(curve.boxes)):
        for mi, m in enumerate(curve.ms):
            rows.append((bi, int(m), float(curve.curve[bi, mi]),
                         float(curve.se[bi, mi])))
    write_csv(_out(cfg, "kb_curve.csv"), ["box", "m", "gap", "se"], rows)
    write_json_summary(_out(cfg, "ergodicity_summary.json"), "ergodicity", cfg, {
        "box_masses": curve.masses,
        "final_gaps": curve.curve[:, -1],
        "final_ses": curve.se[:, -1],
        "inconclusive": curve.inconclusive,
    })
    click.echo("ergodicity: final gaps %s"
               % np.array2string(curve.curve[:, -1], precision=4))


@main.command()
@_common
def diagnose(config_path, out_dir, workers, seed_offset):
    """Contraction, dissipativity, bracket rank, and semigroup continuity."""
    cfg = _load(config_path, out_dir, workers, seed_offset)
    system = _run("diagnose", cfg.build_system)
    b = cfg.budgets
    x0 = np.array(cfg.x0)
    N = system.fast_dim
    seed = cfg.seeds["diagnose"]

    def coupling_task():
        return coupling_rate(system, x0, 0.5 * np.ones(N), -0.5 * np.ones(N),
                             T=20.0 * system.tau, dt=cfg.dt, seed=seed)

    def dissipativity_task():
        lo = np.concatenate([x0, -2.0 * np.ones(N)])
        hi = np.concatenate([x0, 2.0 * np.ones(N)])
        return dissipativity_constants(system, (lo, hi), b["n_pairs"],
                                       seed=seed)

    def rank_task():
        return hormander_rank(sigma_column_fields(system, x0), 0.0,
                              np.zeros(N), max_level=3)

    def semigroup_task():
        e = np.ones(N)
        pairs = [((0.0, 0.5 * e), (0.0, 0.4 * e)),
                 ((0.0, 0.5 * e), (0.0, 0.49 * e))]
        return semigroup_continuity_probe(system, x0, clipped_identity(),
                                          pairs, t=1.0, n_samples=2048,
                                          seed=seed, dt=cfg.dt)

    tasks = [coupling_task, dissipativity_task, rank_task, semigroup_task]
    contraction, dissip, rank, semi = _run(
        "diagnose", lambda: _pool_map(cfg.workers, lambda f: f(), tasks))
    write_csv(_out(cfg, "dissipativity.csv"), ["t", "K_hat", "L_hat", "lam_hat"],
              zip(map(float, dissip.t_grid), map(float, dissip.K_hat),
                  map(float, dissip.L_hat), map(float, dissip.lam_hat)))
    write_json_summary(_out(cfg, "diagnose_summary.json"), "diagnose", cfg, {
        "coupling": {"beta_hat": contraction.beta_hat,
                     "converged": contraction.converged,
                     "truncated_at": contraction.truncated_at},
        "dissipativity": {"K_min": float(dissip.K_hat.min()),
                          "L_max": float(dissip.L_hat.max()),
                          "lam_max": float(dissip.lam_hat.max()),
                          "n_pairs": dissip.n_pairs},
        "hormander": {"rank": rank[0], "level": rank[1],
                      "full_rank": rank[0] == N},
        "semigroup": {"ratios": semi.ratios, "ses": semi.ses,
                      "inconclusive": semi.inconclusive},
    })
    click.echo("diagnose: beta_hat=%.4f K_min=%.4f rank=%d/%d"
               % (contraction.beta_hat, dissip.K_hat.min(), rank[0], N))


def _drift_grid_tables(cfg, system):
    """Ergodic- and measure-route drift tables over slow.x_grid.

    Node estimates run in the worker pool but reproduce, float for float,
    what serial build_drift_table calls would produce: the per-node seed
    derivations are identical.
    """
    b = cfg.budgets
    grid = np.array(cfg.x_grid)
    seed = cfg.seeds["average"]

    def erg_node(i):
        path = make_path(derive_seed(seed, "drift-ergodic", i), cfg.dt,
                         system.noise_dim)
        return averaged_drift_ergodic(system, np.array([grid[i]]),
                                      b["T_erg"], b["burn_in"], path)

    def meas_node(i):
        ms = section_measures(system, np.array([grid[i]]), b["n_sections"],
                              b["n_samples"],
                              seed=derive_seed(seed, "drift-measure", i),
                              k_max=b["k_max"], tol=b["tol"], dt=cfg.dt)
        return averaged_drift_measure(system, np.array([grid[i]]), ms)

    erg = _pool_map(cfg.workers, erg_node, range(len(grid)))
    meas = _pool_map(cfg.workers, meas_node, range(len(grid)))
    t_erg = AveragedDriftTable(grids=(grid,),
                               values=np.stack([v for v, _ in erg]),
                               se=np.stack([s for _, s in erg]),
                               method="ergodic")
    t_meas = AveragedDriftTable(grids=(grid,),
                                values=np.stack([v for v, _ in meas]),
                                se=np.stack([s for _, s in meas]),
                                method="measure")
    return t_erg, t_meas


def _drift_csv(path, table):
    write_csv(path, ["x", "fbar", "se"],
              ((float(x), float(v[0]), float(s[0]))
               for x, v, s in zip(table.grids[0], table.values, table.se)))


@main.command()
@_common
def average(config_path, out_dir, workers, seed_offset):
    """Averaged drift tables (both routes) and the averaged ODE solve."""
    cfg = _load(config_path, out_dir, workers, seed_offset)
    system = _run("average", cfg.build_system)

    t_erg, t_meas = _run("average", lambda: _drift_grid_tables(cfg, system))
    _drift_csv(_out(cfg, "drift_ergodic.csv"), t_erg)
    _drift_csv(_out(cfg, "drift_measure.csv"), t_meas)

    def solve():
        return solve_averaged_ode(t_erg, np.array(cfg.x0), cfg.epsilon,
                                  cfg.T, dt=cfg.dt)

    traj = _run("average", solve)
    write_csv(_out(cfg, "averaged_path.csv"),
              ["t"] + ["x_%d" % (i + 1) for i in range(system.slow_dim)],
              (tuple([float(t)] + list(map(float, row)))
               for t, row in zip(traj.times, traj.states)))

    gaps = np.abs(t_erg.values - t_meas.values)[:, 0]
    comb = np.hypot(t_erg.se[:, 0], t_meas.se[:, 0])
    write_json_summary(_out(cfg, "average_summary.json"), "average", cfg, {
        "route_gap_over_se": gaps / np.maximum(comb, 1e-300),
        "max_gap_over_se": float((gaps / np.maximum(comb, 1e-300)).max()),
        "ergodic_slope": t_erg.max_adjacent_slope(),
        "measure_slope": t_meas.max_adjacent_slope(),
        "final_state": traj.final_state,
    })
    click.echo("average: max two-route gap %.3g (combined-SE units %.2f)"
               % (gaps.max(), (gaps / np.maximum(comb, 1e-300)).max()))


def _study_drift(cfg, system):
    """Averaged-drift source for the error study.

    toy_turbulence uses its quadrature-backed closed form, tabulated on a
    fine grid so the ODE right-hand side stays cheap; other systems fall
    back to an ergodic-average table on slow.x_grid.
    """
    if cfg.system_name == "toy_turbulence":
        from .catalog import ToyParams

        p = cfg.system_params
        params = ToyParams(
            alpha=p.get("alpha", -1.0), vartheta=p.get("vartheta", -0.1),
            beta=p.get("beta", 1.0), sigma=p.get("sigma", 1.0),
            gamma_coeffs=tuple(p.get("gamma_coeffs", (1.0, 0.0, 1.0))))
        lo = min(cfg.x_grid[0], min(cfg.x0)) - 1.0
        hi = max(cfg.x_grid[-1], max(cfg.x0)) + 1.0
        fine = np.linspace(lo, hi, 801)
        return build_drift_table(
            system, fine, "closed-form",
            {"fn": lambda xv: toy_averaged_drift(float(np.atleast_1d(xv)[0]),
                                                 params)})
    table, _ = _drift_grid_tables(cfg, system)
    return table


@main.command("verify-averaging")
@_common
def verify_averaging(config_path, out_dir, workers, seed_offset):
    """Sup-norm averaging error versus epsilon (the limit theorem check)."""
    cfg = _load(config_path, out_dir, workers, seed_offset)
    system = _run("verify-averaging", cfg.build_system)
    b = cfg.budgets

    def body():
        drift = _study_drift(cfg, system)
        return averaging_error_study(
            system, np.array(cfg.x0), cfg.epsilons, cfg.T, b["n_mc"], drift,
            seed=cfg.seeds["verify"], dt=cfg.dt, n_sections=b["n_sections"],
            n_samples=b["n_samples"], k_max=b["k_max"], tol=b["tol"])

    reports = _run("verify-averaging", body)
    write_csv(_out(cfg, "error_study.csv"),
              ["epsilon", "mean_sup_error", "se", "n_mc"],
              ((r.epsilon, r.mean, r.se, len(r.sup_errors)) for r in reports))
    write_json_summary(_out(cfg, "verify_summary.json"), "verify-averaging",
                       cfg, {
        "epsilons": [r.epsilon for r in reports],
        "means": [r.mean for r in reports],
        "ses": [r.se for r in reports],
        "decreasing_ok": [r.decreasing_ok for r in reports],
        "sup_error_quantiles": {
            "%g" % r.epsilon: np.quantile(r.sup_errors, [0.1, 0.5, 0.9])
            for r in reports},
        "all_decreasing": all(r.decreasing_ok in (None, True)
                              for r in reports),
    })
    means = ", ".join("%.4g" % r.mean for r in reports)
    click.echo("verify-averaging: mean sup-errors [%s]" % means)


@main.command()
@_common
def example(config_path, out_dir, workers, seed_offset):
    """End-to-end oracle-backed pipeline on the configured catalog system."""
    cfg = _load(config_path, out_dir, workers, seed_offset)
    system = _run("example", cfg.build_system)
    b = cfg.budgets
    x0 = np.array(cfg.x0)
    seed = cfg.seeds["example"]
    results = {"system": system.name}

    def pullback_body():
        path = make_path(derive_seed(seed, "pullback"), cfg.dt,
                         system.noise_dim)
        est = pullback_solve(system, x0, np.zeros(system.fast_dim), path,
                             k_max=b["k_max"], tol=b["tol"])
        out = {"converged": est.converged, "k_used": est.k_used,
               "rate_estimate": est.rate_estimate}
        if cfg.system_name == "ou_periodic" and not cfg.system_params:
            oracle = ou_random_periodic_oracle(
                lambda t: 2.0 + np.cos(2 * np.pi * np.asarray(t)),
                lambda t: np.sin(2 * np.pi * np.asarray(t)),
                1.0, path, est.r_grid, tau=system.tau)
            out["oracle_sup_error"] = float(
                np.abs(est.values[:, 0] - oracle).max())
        write_csv(_out(cfg, "example_pullback.csv"),
                  ["r"] + ["y_%d" % (i + 1) for i in range(system.fast_dim)],
                  (tuple([float(r)] + list(map(float, v)))
                   for r, v in zip(est.r_grid, est.values)))
        return out

    results["pullback"] = _run("example", pullback_body)

    def moments_body():
        sections = section_measures(system, x0, b["n_sections"],
                                    b["n_samples"],
                                    seed=derive_seed(seed, "measure"),
                                    k_max=b["k_max"], tol=b["tol"], dt=cfg.dt)
        m0 = sections[0]
        out = {"section0_mean": m0.mean(), "section0_var": m0.var()}
        if cfg.system_name == "toy_turbulence" and not cfg.system_params:
            out["oracle_mean"] = toy_section_mean(0.0, float(x0[0]))
            out["oracle_var"] = toy_fast_variance(float(x0[0]))
        return sections, out

    sections, mom = _run("example", moments_body)
    results["moments"] = mom

    def drift_body():
        path = make_path(derive_seed(seed, "ergodic"), cfg.dt,
                         system.noise_dim)
        v_erg, se_erg = averaged_drift_ergodic(system, x0, b["T_erg"],
                                               b["burn_in"], path)
        v_meas, se_meas = averaged_drift_measure(system, x0, sections)
        comb = float(np.hypot(se_erg[0], se_meas[0]))
        out = {"ergodic": v_erg, "ergodic_se": se_erg, "measure": v_meas,
               "measure_se": se_meas,
               "route_gap_over_se": float(abs(v_erg[0] - v_meas[0])
                                          / max(comb, 1e-300))}
        if cfg.system_name == "toy_turbulence" and not cfg.system_params:
            out["oracle"] = toy_averaged_drift(float(x0[0]))
        return out

    results["averaged_drift"] = _run("example", drift_body)
    write_json_summary(_out(cfg, "example_summary.json"), "example", cfg,
                       results)
    click.echo("example: pullback k_used=%d, two-route gap %.2f SE"
               % (results["pullback"]["k_used"],
                  results["averaged_drift"]["route_gap_over_se"]))


if __name__ == "__main__":
    main()
