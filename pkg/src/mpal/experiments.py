"""Monte Carlo drivers behind the CLI subcommands.

Trial ``i`` always uses seed ``split(base_seed, i)``; trials are dispatched
to a process pool and reduced by trial index, so outputs never depend on
the worker count.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .config import ExperimentConfig, parse_config
from .emit import json_text, write_csv, write_json
from .emsa import (
    ScaleAnalysis,
    build_buffered,
    choose_bad_center,
    crude_bound_check,
    decay_parameter_schedule,
    eigenvalue_proximity,
    evaluate_events,
    run_iteration,
    scale_schedule,
    verify_buffered_decay,
    verify_local_decay,
)
from .errors import ConfigError, DiagnosticError, SizeCapError
from .geometry import cube_set, project_sites, rearrange, sym_distance
from .hamiltonian import assemble, sample_disorder
from .localization import certify_cube
from .spectral import eigensystem, spectral_distance, wegner_table, wilson_interval

log = logging.getLogger(__name__)

TRIAL_TRACE_CAP = 20  # iteration traces kept verbatim per report


@dataclass(frozen=True)
class TrialResult:
    index: int
    seed: int
    payload: dict
    wall_time: float = 0.0  # kept in memory only; never emitted


def trial_seed(base_seed, i):
    return rng.split(base_seed, i)


def _map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=chunk))


def _center(cfg, n):
    c = cfg.geometry.center
    if c is None:
        return (0,) * n
    if len(c) != n:
        raise ConfigError(f"geometry.center has {len(c)} coordinates but N={n}")
    return tuple(c)


def provenance(cfg):
    """Config as embedded in outputs; execution-only settings are dropped."""
    d = cfg.to_dict()
    for key in ("workers", "out"):
        d["run"].pop(key)
    return d


def _check_size(theta, cap, what):
    if len(theta) > cap:
        raise SizeCapError(f"{what} has {len(theta)} configurations, above the cap of {cap}")


# ----------------------------------------------------------------------------
# localization probability


LOCALIZE_TRIAL_HEADER = ("N", "L", "lambda", "trial", "seed", "pass", "n_rotated", "min_margin")
LOCALIZE_SUMMARY_HEADER = ("N", "L", "lambda", "m", "trials", "passes", "p_hat", "ci_lo", "ci_hi")


def _localize_task(task):
    cfg_dict, n, L, lam, i = task
    cfg = parse_config(cfg_dict)
    t0 = time.perf_counter()
    seed = trial_seed(cfg.run.base_seed, i)
    theta = cube_set(_center(cfg, n), L)
    real = sample_disorder(seed, project_sites(theta), cfg.model.law)
    es = eigensystem(assemble(theta, real, lam, cfg.model.potential, cfg.run.cap))
    cert = certify_cube(es, theta, cfg.msa.m, L, cfg.msa.tau)
    margin = min(c.margin for c in cert.certificates)
    row = (n, L, lam, i, seed, cert.passed, cert.n_rotated, margin)
    return TrialResult(i, seed, {"row": row}, time.perf_counter() - t0)


def run_localization_probability(cfg: ExperimentConfig, out=None):
    """Fraction of m-localizing cubes per (N, L, lambda), with Wilson intervals."""
    out = cfg.run.out if out is None else out
    cfg_dict = cfg.to_dict()
    for n in cfg.model.N:
        for L in cfg.geometry.L:
            _check_size(cube_set(_center(cfg, n), L), cfg.run.cap, f"cube N={n}, L={L}")
    tasks = [(cfg_dict, n, L, lam, i)
             for n in cfg.model.N for L in cfg.geometry.L for lam in cfg.model.lam
             for i in range(cfg.run.trials)]
    results = _map(_localize_task, tasks, cfg.run.workers)
    rows = [r.payload["row"] for r in results]
    summary = summarize_localization(rows, cfg.msa.m)
    write_csv(os.path.join(out, "localize_trials.csv"), LOCALIZE_TRIAL_HEADER, rows)
    write_csv(os.path.join(out, "localize_summary.csv"), LOCALIZE_SUMMARY_HEADER, summary)
    return summary


def summarize_localization(rows, m):
    groups = {}
    for n, L, lam, _, _, passed, _, _ in rows:
        groups.setdefault((n, L, lam), []).append(bool(passed))
    out = []
    for (n, L, lam), flags in groups.items():
        k, t = sum(flags), len(flags)
        lo, hi = wilson_interval(k, t)
        out.append((n, L, lam, m, t, k, k / t, lo, hi))
    return out


# ----------------------------------------------------------------------------
# Wegner statistics


WEGNER_HEADER = ("s", "fraction", "ci_lo", "ci_hi")
WEGNER_TRIAL_HEADER = ("trial", "seed", "distance")


def _wegner_regions(cfg, n):
    g = cfg.geometry
    t1 = cube_set(g.theta1.center, g.theta1.L)
    t2 = cube_set(g.theta2.center, g.theta2.L)
    if t1.n_particles != n or t2.n_particles != n:
        raise ConfigError("wegner regions must have N coordinates")
    if t1.distance_to(t2) < 8 * n * max(t1.diameter, t2.diameter):
        raise ConfigError("wegner regions violate d_S >= 8 N max diam_S")
    return t1, t2


def _wegner_task(task):
    cfg_dict, n, lam, i = task
    cfg = parse_config(cfg_dict)
    t1, t2 = _wegner_regions(cfg, n)
    seed = trial_seed(cfg.run.base_seed, i)
    real = sample_disorder(seed, project_sites(t1) | project_sites(t2), cfg.model.law)
    e1 = eigensystem(assemble(t1, real, lam, cfg.model.potential, cfg.run.cap))
    e2 = eigensystem(assemble(t2, real, lam, cfg.model.potential, cfg.run.cap))
    return TrialResult(i, seed, {"distance": spectral_distance(e1, e2)})


def run_wegner(cfg: ExperimentConfig, out=None):
    out = cfg.run.out if out is None else out
    n = cfg.model.N[0]
    lam = cfg.model.lam[0]
    _wegner_regions(cfg, n)
    cfg_dict = cfg.to_dict()
    results = _map(_wegner_task, [(cfg_dict, n, lam, i) for i in range(cfg.run.trials)], cfg.run.workers)
    dist = np.array([r.payload["distance"] for r in results])
    table = wegner_table(dist, cfg.geometry.s_grid)
    write_csv(os.path.join(out, "wegner_distances.csv"), WEGNER_TRIAL_HEADER,
              [(r.index, r.seed, r.payload["distance"]) for r in results])
    rows = [(w.s, w.fraction, w.ci_lo, w.ci_hi) for w in table]
    write_csv(os.path.join(out, "wegner_cdf.csv"), WEGNER_HEADER, rows)
    return rows


# ----------------------------------------------------------------------------
# EMSA


LEMMAS = ("local_decay", "crude_bound", "buffered_decay")
EMSA_SUMMARY_HEADER = ("N", "lambda", "lemma", "trials", "checked", "applicable", "passed", "violations",
                       "min_margin")
EMSA_TRIAL_HEADER = ("N", "lambda", "trial", "seed", "E_PI", "E_FI", "E_NR", "E",
                     "local_decay_violations", "crude_bound_violations", "buffered_decay_violations",
                     "traces", "traces_passed")


class _Tally:
    def __init__(self):
        self.checked = self.applicable = self.passed = 0
        self.min_margin = math.inf

    def add(self, check):
        self.checked += 1
        if check.applicable:
            self.applicable += 1
            self.passed += bool(check.passed)
            self.min_margin = min(self.min_margin, check.margin)

    def to_dict(self):
        return {"checked": self.checked, "applicable": self.applicable, "passed": self.passed,
                "violations": self.applicable - self.passed, "min_margin": self.min_margin}


def emsa_report(cfg: ExperimentConfig, n, lam, trial):
    """Full per-realization report (pure function of its arguments)."""
    seed = trial_seed(cfg.run.base_seed, trial)
    p = cfg.msa
    center = _center(cfg, n)
    l = cfg.geometry.l
    L = l ** p.gamma
    theta = cube_set(center, L)
    _check_size(theta, cfg.run.cap, f"cube N={n}, L={L}")
    real = sample_disorder(seed, project_sites(theta), cfg.model.law)
    an = ScaleAnalysis(center, l, real, lam, cfg.model.potential, p, p.m, L, cfg.run.cap)
    events = evaluate_events(an)
    b = choose_bad_center(an)
    buffered = build_buffered(an, b) if b is not None else None

    tallies = {k: _Tally() for k in LEMMAS}
    es = an.es
    res = an.residuals
    for k in range(es.size):
        psi = es.eigenvectors[:, k]
        mu = float(es.eigenvalues[k])
        for a in an.cover.centers:
            cube = an.cube(a)
            ces = an.cube_es(a)
            tallies["local_decay"].add(verify_local_decay(psi, mu, cube, an.theta, ces, p, p.m, L,
                                                          float(res[k]), an.localizing(a)))
            eta = spectral_distance(np.array([mu]), ces)
            tallies["crude_bound"].add(crude_bound_check(psi, mu, cube.members, an.theta, eta, ces,
                                                         float(res[k])))
        if buffered is not None:
            tallies["buffered_decay"].add(verify_buffered_decay(psi, mu, buffered, an, float(res[k])))

    traces = []
    step4 = {"eigenpairs": int(es.size), "found": 0}
    nonterminated = 0
    if events.good and buffered is not None:
        stop = cfg.run.stop_radius
        stop = 200 * n * n * l if stop is None else stop
        for k in range(es.size):
            psi = es.eigenvectors[:, k]
            mu = float(es.eigenvalues[k])
            prox, found = eigenvalue_proximity(mu, an, buffered)
            step4["found"] += bool(found)
            region = an.buffer_region(prox.center) if prox.region == "buffer" else an.cube(prox.center).members
            vals = an.values(psi, region)
            x_mu = rearrange(region.elements[int(np.argmax(vals))])
            for y0 in an.theta.reps:
                if sym_distance(y0, x_mu) < stop:
                    continue
                try:
                    traces.append(run_iteration(psi, mu, an, buffered, x_mu, y0, stop, residual=float(res[k])))
                except DiagnosticError:
                    nonterminated += 1
    report = {
        "schema": "mpal.emsa-report/1",
        "config": provenance(cfg),
        "N": n, "lambda": lam, "trial": trial, "seed": seed,
        "l": l, "L": L, "m": p.m, "m_prime": an.m_prime, "M": an.big_m,
        "threshold": an.threshold,
        "events": events.to_dict(),
        "bad_center": None if b is None else list(b),
        "lemmas": {k: t.to_dict() for k, t in tallies.items()},
        "step4": step4,
        "iteration": {
            "traces": len(traces),
            "passed": sum(t.passed for t in traces),
            "nonterminated": nonterminated,
            "elided": len(traces) > TRIAL_TRACE_CAP,
            "samples": [t.to_dict() for t in traces[:TRIAL_TRACE_CAP]],
        },
    }
    return report


def _emsa_task(task):
    cfg_dict, n, lam, i = task
    cfg = parse_config(cfg_dict)
    t0 = time.perf_counter()
    rep = emsa_report(cfg, n, lam, i)
    return TrialResult(i, rep["seed"], rep, time.perf_counter() - t0)


def report_name(n, lam_index, trial):
    return f"report_N{n}_lam{lam_index}_trial{trial:05d}.json"


def run_emsa(cfg: ExperimentConfig, out=None):
    """Per-seed JSON reports plus aggregate and per-trial CSVs."""
    out = cfg.run.out if out is None else out
    cfg_dict = cfg.to_dict()
    tasks = [(cfg_dict, n, lam, i) for n in cfg.model.N for lam in cfg.model.lam for i in range(cfg.run.trials)]
    results = _map(_emsa_task, tasks, cfg.run.workers)
    lam_index = {lam: j for j, lam in enumerate(cfg.model.lam)}
    trial_rows, agg = [], {}
    for r in results:
        rep = r.payload
        n, lam = rep["N"], rep["lambda"]
        write_json(os.path.join(out, "emsa", report_name(n, lam_index[lam], r.index)), rep)
        ev, lem, it = rep["events"], rep["lemmas"], rep["iteration"]
        trial_rows.append((n, lam, r.index, r.seed, ev["E_PI"], ev["E_FI"], ev["E_NR"], ev["E"],
                           lem["local_decay"]["violations"], lem["crude_bound"]["violations"],
                           lem["buffered_decay"]["violations"], it["traces"], it["passed"]))
        for name in LEMMAS:
            a = agg.setdefault((n, lam, name), {"trials": 0, "checked": 0, "applicable": 0, "passed": 0,
                                                "min_margin": math.inf})
            a["trials"] += 1
            for key in ("checked", "applicable", "passed"):
                a[key] += lem[name][key]
            a["min_margin"] = min(a["min_margin"], lem[name]["min_margin"])
    summary = [(n, lam, name, a["trials"], a["checked"], a["applicable"], a["passed"],
                a["applicable"] - a["passed"], a["min_margin"]) for (n, lam, name), a in agg.items()]
    write_csv(os.path.join(out, "emsa_trials.csv"), EMSA_TRIAL_HEADER, trial_rows)
    write_csv(os.path.join(out, "emsa_summary.csv"), EMSA_SUMMARY_HEADER, summary)
    return summary, [r.payload for r in results]


def replay_emsa(report):
    """Recompute a report from its embedded config and seed; returns the JSON text."""
    cfg = parse_config(report["config"])
    return json_text(emsa_report(cfg, report["N"], report["lambda"], report["trial"]))


# ----------------------------------------------------------------------------
# schedules


SCALE_HEADER = ("k", "L", "log_L", "m_k", "m_prime")
DECAY_HEADER = ("n", "p_n")


def run_schedule(cfg: ExperimentConfig, out=None):
    out = cfg.run.out if out is None else out
    p = cfg.msa
    tables = {}
    for n in cfg.model.N:
        s = scale_schedule(cfg.geometry.L0, p.gamma, p.m, n, p, cfg.geometry.k_max)
        d = decay_parameter_schedule(cfg.run.p, n, p.gamma)
        tables[n] = (s, d)
        write_csv(os.path.join(out, f"scale_schedule_N{n}.csv"), SCALE_HEADER,
                  [(r.k, r.L, r.log_L, r.m, r.m_prime) for r in s.rows])
        write_csv(os.path.join(out, f"decay_schedule_N{n}.csv"), DECAY_HEADER,
                  [(k + 1, v) for k, v in enumerate(d.p)])
    doc = {
        "schema": "mpal.schedule/1",
        "config": provenance(cfg),
        "schedules": [
            {"N": n, "m_inf": s.m_inf, "m_inf_at_least_m": s.m_inf >= p.m,
             "rows": [{"k": r.k, "L": r.L, "log_L": r.log_L, "m_k": r.m, "m_prime": r.m_prime} for r in s.rows],
             "p": list(d.p), "p_star": d.p_star, "hypothesis_ok": d.hypothesis_ok, "chain_ok": d.chain_ok}
            for n, (s, d) in tables.items()
        ],
    }
    write_json(os.path.join(out, "schedule.json"), doc)
    return doc


RUNNERS = {
    "localize": run_localization_probability,
    "wegner": run_wegner,
    "emsa": run_emsa,
    "schedule": run_schedule,
}
