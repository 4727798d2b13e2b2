"""Experiment pipelines behind the command line: sweeps, Chern numbers, N = C reports."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig, Model
from .flow import FlowIndex, SpectrumSweep, SweepConfig, fredholm_report, mu_grid, spectral_index, sweep
from .quantize import BasisSpec
from .symbols import GapSpec, check_gap
from .topology import ChernResult, chern_index, clutching_winding, upper_band

DEFAULT_N_MAX = {1: 40, 2: 14}
DEFAULT_MESH = {1: 48, 2: 9}


def atomic_write(path: str | Path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.digest(), "seed": cfg.seed,
            "versions": {"indexlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__}}


def sweep_config(model: Model, cfg: ExperimentConfig, epsilon: float) -> SweepConfig:
    n = model.symbol.dof
    base = cfg.n_max or DEFAULT_N_MAX.get(n, 10)
    # keep the phase-space extent fixed as eps shrinks
    n_max = int(round(base / epsilon))
    basis = BasisSpec(n, n_max, cfg.buffer, epsilon)
    half = model.gap_constant / 2
    window = cfg.window or (-half, half)
    return SweepConfig(mu_grid(cfg.mu_end, cfg.mu_step), window, basis)


def gap_certificate(model: Model, cfg: ExperimentConfig):
    """Certify the gap at ``C - alpha`` where ``alpha = C/2`` is the window margin."""
    spec = GapSpec(model.rank, model.gap_constant / 2)
    cert = check_gap(model.symbol, spec, cfg.gap_radii, cfg.gap_samples, seed=0)
    return cert, {"min_lower_margin": cert.min_lower_margin, "min_upper_margin": cert.min_upper_margin,
                  "sample_radii": list(cert.sample_radii), "sample_count": cert.sample_count,
                  "certified_constant": spec.gap_constant, "passed": cert.passed, "heuristic": True}


def sweep_csv(sw: SpectrumSweep) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mu", "eigenvalue", "branch_id", "reliable"])
    for mu, val, b_id, rel in sw.rows():
        w.writerow([repr(float(mu)), repr(float(val)), b_id, str(rel).lower()])
    return buf.getvalue()


def flow_doc(idx: FlowIndex) -> dict:
    return {"value": idx.value, "crossing_count_up": idx.crossing_count_up,
            "crossing_count_down": idx.crossing_count_down}


def branch_summary(sw: SpectrumSweep) -> list[dict]:
    return [{"entry": b.entry, "exit": b.exit, "mu_start": b.mu[0], "mu_end": b.mu[-1],
             "points": len(b.mu)} for b in sw.branches]


def chern_doc(res: ChernResult) -> dict:
    return {"value": res.value, "raw": res.raw, "residual": res.residual,
            "method": res.method, "converged": res.converged}


def run_flow(model: Model, cfg: ExperimentConfig) -> tuple[dict, dict[float, SpectrumSweep]]:
    per_eps, sweeps = {}, {}
    for eps in cfg.epsilon:
        sw = sweep(model.symbol, sweep_config(model, cfg, eps))
        sweeps[eps] = sw
        per_eps[repr(eps)] = {**flow_doc(spectral_index(sw)), "branches": branch_summary(sw)}
    values = {d["value"] for d in per_eps.values()}
    first = per_eps[repr(cfg.epsilon[0])]
    doc = {"value": first["value"], "crossing_count_up": first["crossing_count_up"],
           "crossing_count_down": first["crossing_count_down"], "per_epsilon": per_eps,
           "epsilon_consistent": len(values) == 1}
    return doc, sweeps


def run_chern(model: Model, cfg: ExperimentConfig) -> dict:
    n = model.symbol.dof
    res = cfg.mesh_res or DEFAULT_MESH.get(n)
    lower = chern_index(model.symbol, model.rank, n, res)
    up_sym, up_rank = upper_band(model.symbol, model.rank)
    upper = chern_index(up_sym, up_rank, n, res)
    doc = {"lower": chern_doc(lower), "upper": chern_doc(upper),
           "band_sum": lower.value + upper.value, "mesh_resolution": res}
    if n == 1:
        doc["clutching_winding"] = clutching_winding(model.symbol, model.rank)
    return doc


def verdict(n_doc: dict, c_doc: dict, cert_ok: bool) -> str:
    lower = c_doc["lower"]
    ok = lower["converged"] and n_doc["epsilon_consistent"] and cert_ok
    if "clutching_winding" in c_doc:
        ok = ok and c_doc["clutching_winding"] == lower["value"]
    if not ok:
        return "inconclusive"
    return "equal" if n_doc["value"] == lower["value"] else "unequal"


def verify_index(model: Model, cfg: ExperimentConfig):
    """Run both pipelines; returns ``(report, sweeps, chern)``."""
    cert, cert_doc = gap_certificate(model, cfg)
    n_doc, sweeps = run_flow(model, cfg)
    c_doc = run_chern(model, cfg)
    report = {
        "model": model.label, "dof": model.symbol.dof, "dim": model.symbol.dim, "rank": model.rank,
        "gap_constant": model.gap_constant, "N": n_doc, "C": c_doc["lower"],
        "chern": c_doc, "gap_certificate": cert_doc,
        "verdict": verdict(n_doc, c_doc, cert.passed), "provenance": provenance(cfg),
    }
    return report, sweeps, c_doc


def fredholm_doc(n: int, n_max: int) -> dict:
    res = fredholm_report(n, BasisSpec(n, n_max))
    adj = fredholm_report(n, BasisSpec(n, n_max), adjoint=True)
    return {"n": n, "n_max": n_max, "index": res.value, "kernel_dim": res.kernel_dim,
            "cokernel_dim": res.cokernel_dim, "gap_ratio": res.gap_ratio,
            "adjoint_index": adj.value, "smallest_singular_values": list(res.tail)}
