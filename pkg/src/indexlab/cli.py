"""``indexlab`` command line.

Exit codes: 0 success, 1 computation error or inconclusive verdict,
2 configuration error, 3 verdict "unequal" (N != C).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import sys
import time
from pathlib import Path

from . import lab
from .config import ConfigError, ExperimentConfig, build_model, builtin_model, config_from_dict, load_config
from .flow import FlowError, spectral_index, sweep
from .quantize import QuantizationError, dump_matrix, quantize
from .symbols import SymbolError, normal_form, symbol_to_dict
from .topology import TopologyError, projector_field, save_projector_field, SphereMesh

EXIT_OK, EXIT_COMPUTE, EXIT_CONFIG, EXIT_UNEQUAL = 0, 1, 2, 3


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="experiment config (TOML, or JSON)")
    p.add_argument("--model", metavar="NAME", help="builtin model: E, E_n_C:<n>:<C>, constant[:<n>]")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--epsilon", metavar="F", type=float, action="append", help="semiclassical parameter (repeatable)")
    p.add_argument("--seed", metavar="U64", type=int)
    p.add_argument("--mesh-res", metavar="N", type=int)
    p.add_argument("--n-max", metavar="N", type=int)
    p.add_argument("--mu-step", metavar="F", type=float)
    p.add_argument("--dump-matrix", metavar="MU", type=float, action="append", default=[],
                   help="also dump the quantized matrix at this mu (repeatable)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="indexlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()
    sub.add_parser("spectrum", parents=[common], help="sweep mu and write in-gap spectrum CSV")
    sub.add_parser("flow", parents=[common], help="spectral index N for each epsilon")
    ch = sub.add_parser("chern", parents=[common], help="Chern index of the lower band")
    ch.add_argument("--export-field", metavar="PATH", help="write the projector field (PATH.json + PATH.bin)")
    sub.add_parser("verify-index", parents=[common], help="compute N and C and compare")
    nf = sub.add_parser("normal-form", parents=[common], help="write a normal-form symbol as JSON")
    nf.add_argument("--n", type=int, required=True, help="degrees of freedom")
    nf.add_argument("--chern", type=int, required=True, help="Chern index of the model")
    nf.add_argument("-o", "--output", metavar="FILE", help="output file (default OUT/normal_form_n<n>_c<C>.json)")
    fr = sub.add_parser("fredholm", parents=[common], help="Fredholm index of the quantized g_n")
    fr.add_argument("--n", type=int, default=1)
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config and args.model:
        raise ConfigError("give either --config or --model, not both")
    if args.config:
        cfg = load_config(args.config)
    elif args.model:
        cfg = config_from_dict({"model": builtin_model(args.model)})
    else:
        raise ConfigError("no model: pass --config PATH or --model NAME")
    if args.out:
        cfg.out = args.out
    if args.epsilon:
        cfg.epsilon = list(args.epsilon)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.mesh_res is not None:
        cfg.mesh_res = args.mesh_res
    if args.n_max is not None:
        cfg.n_max = args.n_max
    if args.mu_step is not None:
        cfg.mu_step = args.mu_step
    cfg.validate()
    return cfg


def _dump_matrices(model, cfg, mus, out: Path) -> None:
    for mu in mus:
        sc = lab.sweep_config(model, cfg, cfg.epsilon[0])
        dump_matrix(quantize(model.symbol.at_mu(mu), sc.basis), out / f"matrix_mu{mu:+.4f}.bin")


def _metadata(out: Path, command: str, started: float) -> None:
    lab.atomic_write(out / "metadata.json", lab.dump_json({
        "command": command, "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "runtime_seconds": round(time.time() - started, 3)}))


def cmd_spectrum(args, cfg: ExperimentConfig) -> int:
    model = build_model(cfg.model, cfg.seed)
    out = Path(cfg.out)
    eps = cfg.epsilon[0]
    sc = lab.sweep_config(model, cfg, eps)
    sw = sweep(model.symbol, sc)
    idx = spectral_index(sw)
    lab.atomic_write(out / "sweep.csv", lab.sweep_csv(sw))
    lab.atomic_write(out / "spectrum.json", lab.dump_json({
        "model": model.label, "epsilon": eps, "n_max": sc.basis.n_max, "window": list(sc.window),
        "branches": lab.branch_summary(sw), "N": lab.flow_doc(idx), "provenance": lab.provenance(cfg)}))
    _dump_matrices(model, cfg, args.dump_matrix, out)
    print(f"{model.label}: {len(sw.branches)} in-gap branch(es), N = {idx.value}")
    return EXIT_OK


def cmd_flow(args, cfg: ExperimentConfig) -> int:
    model = build_model(cfg.model, cfg.seed)
    out = Path(cfg.out)
    doc, sweeps = lab.run_flow(model, cfg)
    lab.atomic_write(out / "sweep.csv", lab.sweep_csv(sweeps[cfg.epsilon[0]]))
    lab.atomic_write(out / "flow.json", lab.dump_json({"model": model.label, "N": doc,
                                                       "provenance": lab.provenance(cfg)}))
    _dump_matrices(model, cfg, args.dump_matrix, out)
    print(f"{model.label}: N = {doc['value']} (epsilon consistent: {doc['epsilon_consistent']})")
    return EXIT_OK


def cmd_chern(args, cfg: ExperimentConfig) -> int:
    model = build_model(cfg.model, cfg.seed)
    out = Path(cfg.out)
    doc = lab.run_chern(model, cfg)
    lab.atomic_write(out / "chern.json", lab.dump_json({"model": model.label, **doc,
                                                        "provenance": lab.provenance(cfg)}))
    if args.export_field:
        n = model.symbol.dof
        mesh = SphereMesh(1 + 2 * n, doc["mesh_resolution"], "grid" if n == 1 else "gauss")
        save_projector_field(projector_field(model.symbol, model.rank, mesh), args.export_field)
    print(f"{model.label}: C = {doc['lower']['value']} (raw {doc['lower']['raw']:.6f})")
    return EXIT_OK if doc["lower"]["converged"] else EXIT_COMPUTE


def cmd_verify(args, cfg: ExperimentConfig) -> int:
    model = build_model(cfg.model, cfg.seed)
    out = Path(cfg.out)
    report, sweeps, c_doc = lab.verify_index(model, cfg)
    lab.atomic_write(out / "sweep.csv", lab.sweep_csv(sweeps[cfg.epsilon[0]]))
    lab.atomic_write(out / "chern.json", lab.dump_json({"model": model.label, **c_doc}))
    lab.atomic_write(out / "report.json", lab.dump_json(report))
    _dump_matrices(model, cfg, args.dump_matrix, out)
    print(f"{model.label}: N = {report['N']['value']}, C = {report['C']['value']} -> {report['verdict']}")
    return {"equal": EXIT_OK, "unequal": EXIT_UNEQUAL}.get(report["verdict"], EXIT_COMPUTE)


def cmd_normal_form(args) -> int:
    if args.n < 1 or args.n > 6:
        raise ConfigError(f"unsupported n={args.n} (1..6)")
    sym, gap = normal_form(args.n, args.chern)
    path = Path(args.output) if args.output else Path(args.out or "out") / f"normal_form_n{args.n}_c{args.chern}.json"
    lab.atomic_write(path, lab.dump_json(symbol_to_dict(sym)))
    print(f"wrote {path} (dim {sym.dim}, rank {gap.rank})")
    return EXIT_OK


def cmd_fredholm(args) -> int:
    if args.n not in (1, 2, 3):
        raise ConfigError(f"unsupported n={args.n} (1..3)")
    n_max = args.n_max or {1: 40, 2: 20, 3: 8}[args.n]
    doc = lab.fredholm_doc(args.n, n_max)
    lab.atomic_write(Path(args.out or "out") / "fredholm.json", lab.dump_json(doc))
    print(f"Ind(g_{args.n}) = {doc['index']:+d} (gap ratio {doc['gap_ratio']:.3g})")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        if args.command == "normal-form":
            return cmd_normal_form(args)
        if args.command == "fredholm":
            return cmd_fredholm(args)
        cfg = resolve_config(args)
        handler = {"spectrum": cmd_spectrum, "flow": cmd_flow, "chern": cmd_chern,
                   "verify-index": cmd_verify}[args.command]
        code = handler(args, cfg)
        _metadata(Path(cfg.out), args.command, started)
        return code
    except ConfigError as exc:
        print(f"indexlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FlowError, TopologyError, QuantizationError, SymbolError, ValueError) as exc:
        print(f"indexlab: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
