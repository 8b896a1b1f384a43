"""Command-line entry point: ``semrd <subcommand>``.

Exit codes: 0 success, 2 invalid input, 3 infeasible instance, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import channel, codec, distortion, estimators, experiments, solver
from .experiments import ExperimentConfig

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4

LAMBDA_HELP = (
    "rate multiplier lambda. The solver minimizes lambda*I(X;X^) + D_R + beta*D_T, i.e. the "
    "Gibbs exponent is -(d_RD + beta*d_T)/lambda. Relative to the training-loss form "
    "R + lambda'*D_R + beta'*D_T this is lambda = 1/lambda', beta = beta'/lambda'."
)


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _write(text: str, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _dump(obj, args):
    _write(json.dumps(obj, indent=2) + "\n", args.out)


def _source(args):
    if args.source:
        return experiments.load_source(args.source)
    return experiments.reference_source()


def _result_json(res: solver.SolverResult) -> dict:
    return {
        "mapping": np.asarray(res.mapping).tolist(),
        "pxhat": np.asarray(res.pxhat).tolist(),
        "py_given_xhat": np.asarray(res.py_given_xhat).tolist(),
        "rate_nats": res.rate_nats,
        "rate_bits": res.rate_nats / np.log(2),
        "pixel_distortion": res.pixel_distortion,
        "task_distortion_nats": res.task_distortion_nats,
        "lagrangian": res.lagrangian,
        "iterations": res.iterations,
        "converged": res.converged,
        "residual": res.residual,
        "support": res.support.tolist(),
    }


def cmd_solve(args):
    src = _source(args)
    cfg = solver.SolverConfig(lam=args.lam, beta=args.beta, max_iters=args.max_iters, tol=args.tol,
                              init_pxhat=args.init, seed=args.seed, restarts=args.restarts)
    _dump(_result_json(solver.solve(src, None, cfg)), args)


def cmd_rd_curve(args):
    src = _source(args)
    pts = solver.rd_curve(src, None, _floats(args.lambdas), args.beta, threads=args.threads)
    rows = [asdict(p) for p in pts]
    if args.format == "json":
        _dump(rows, args)
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        _write(buf.getvalue(), args.out)


def _experiment_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_json(json.loads(Path(args.config).read_text()))
    else:
        cfg = ExperimentConfig()
    if args.source:
        cfg.source = json.loads(Path(args.source).read_text())
    for name in ("lambda_grid", "beta_grid", "flip_grid", "snr_grid"):
        val = getattr(args, name, None)
        if val:
            setattr(cfg, name, _floats(val))
    if args.mode:
        cfg.mapping_mode = args.mode
    if args.restarts is not None:
        cfg.restarts = args.restarts
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.threads = args.threads
    cfg.__post_init__()
    return cfg


def cmd_pipeline(args):
    cfg = _experiment_config(args)
    records = experiments.run_pipeline(cfg)
    out = args.out or cfg.output
    text = experiments.format_results(records, args.format)
    _write(text, out)


def cmd_transfer(args):
    cfg = _experiment_config(args)
    src = experiments.source_from_json(cfg.source)
    lam = cfg.lambda_grid[0]
    mappings = experiments.solve_for_betas(src, lam, cfg.beta_grid, cfg.mapping_mode, cfg.restarts)
    rows = [asdict(r) for r in experiments.transfer_eval(src, mappings)]
    if args.format == "json":
        _dump(rows, args)
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["beta", "task_a_accuracy", "task_b_accuracy"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        _write(buf.getvalue(), args.out)


def read_pairs_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row])
    xcols = [i for i, h in enumerate(header) if h.strip().startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.strip().startswith("y")]
    if not xcols or not ycols:
        raise ValueError("CSV header needs x* and y* columns")
    return estimators.SampleSet(data[:, xcols], data[:, ycols])


def cmd_mi_club(args):
    s = read_pairs_csv(args.input)
    model = estimators.fit_gaussian_conditional(s)
    _dump({
        "n": len(s),
        "club_nats": estimators.club_estimate(s, model),
        "l1out_nats": estimators.l1out_estimate(s, model) if len(s) <= 20_000 else None,
        "weight": np.asarray(model.weight).tolist(),
        "bias": np.asarray(model.bias).tolist(),
        "noise_variance": np.asarray(model.noise_variance).tolist(),
        "ridge_fallback": bool(model.ridge_fallback),
    }, args)


def _read_ints(path):
    text = Path(path).read_text().split()
    return np.array([int(v) for v in text], dtype=np.int64)


def cmd_codec(args):
    if args.action == "encode":
        stream = codec.SymbolStream.from_values(_read_ints(args.input))
        if args.model:
            model = codec.model_from_json(json.loads(Path(args.model).read_text()))
        elif len(stream) >= 10:
            # small streams cannot support many components
            m = max(1, min(args.components, len(stream) // 10))
            model = codec.fit_gmm_pmf(stream.values.astype(float), M=m, seed=args.seed or 0)
        else:
            counts = np.bincount(stream.values - stream.z_min) + 1.0
            model = codec.TablePmfModel(stream.z_min, counts / counts.sum())
        payload = codec.arithmetic_encode(stream, model)
        Path(args.output).write_bytes(payload.data)
        info = {"symbols": len(stream), "bit_length": payload.bit_length, "header_bytes": payload.header_size,
                "rate_loss_bits": codec.rate_loss(model, stream)}
        sys.stderr.write(json.dumps(info) + "\n")
    else:
        stream = codec.arithmetic_decode(Path(args.input).read_bytes())
        Path(args.output).write_text("\n".join(str(v) for v in stream.values.tolist()) + ("\n" if len(stream) else ""))


def cmd_channel_ser(args):
    rows = []
    for snr in _floats(args.snr_db):
        cfg = channel.ChannelConfig(kind=args.kind, snr_db=snr, seed=args.seed, fading=args.fading)
        ser, ber = channel.measure_ser(args.mod, cfg, args.n)
        rows.append({"modulation": args.mod, "kind": args.kind, "snr_db": snr, "n": args.n, "ser": ser, "ber": ber})
    if args.format == "json":
        _dump(rows, args)
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        _write(buf.getvalue(), args.out)


def cmd_oracle(args):
    if args.source:
        src = experiments.load_source(args.source)
    else:
        src = distortion.random_source(args.seed or 0, 4, 3, 2)
    cfg = solver.SolverConfig(lam=args.lam, beta=args.beta)
    mapping, best = solver.brute_force_solve(src, None, cfg, args.step)
    res = solver.solve(src, None, cfg)
    _dump({"oracle_lagrangian": best, "oracle_mapping": np.asarray(mapping).tolist(),
           "solver_lagrangian": res.lagrangian, "gap": res.lagrangian - best}, args)


def cmd_make_source(args):
    geo = experiments.GeometryConfig(hard=args.hard, prior=args.prior)
    src = experiments.generate_semantic_source(args.n_symbols, args.n_labels, geo, seed=args.seed or 0)
    _dump(experiments.source_to_json(src), args)


def build_parser() -> argparse.ArgumentParser:
    base = argparse.ArgumentParser(add_help=False)
    base.add_argument("--seed", type=int, default=None)
    base.add_argument("--format", choices=("csv", "json"), default="csv")
    base.add_argument("--threads", type=int, default=1)
    base.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False, parents=[base])
    common.add_argument("--out", default=None, help="output path (default stdout)")

    p = argparse.ArgumentParser(prog="semrd", description="Semantic rate-distortion toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve one (lambda, beta) point")
    s.add_argument("--source", help="source JSON (default: reference instance)")
    s.add_argument("--lambda", dest="lam", type=float, required=True, help=LAMBDA_HELP)
    s.add_argument("--beta", type=float, default=0.0)
    s.add_argument("--max-iters", type=int, default=10_000)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--init", choices=("uniform", "seeded-random"), default="uniform")
    s.add_argument("--restarts", type=int, default=0, help="extra seeded-random starts; best Lagrangian kept")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("rd-curve", parents=[common], help="sweep lambda at fixed beta")
    s.add_argument("--source")
    s.add_argument("--lambdas", required=True, help="comma-separated; " + LAMBDA_HELP)
    s.add_argument("--beta", type=float, default=0.0)
    s.set_defaults(func=cmd_rd_curve)

    for name, func, helptext in (("pipeline", cmd_pipeline, "end-to-end sweep, emits records"),
                                 ("transfer", cmd_transfer, "score per-beta mappings on the alternate task")):
        s = sub.add_parser(name, parents=[common], help=helptext,
                           description="MSE over symbol embeddings is reported in place of PSNR.")
        s.add_argument("--config", help="JSON mirroring ExperimentConfig")
        s.add_argument("--source")
        s.add_argument("--lambda-grid", help=LAMBDA_HELP)
        s.add_argument("--beta-grid")
        s.add_argument("--flip-grid")
        s.add_argument("--snr-grid")
        s.add_argument("--mode", choices=("argmax", "stochastic"))
        s.add_argument("--restarts", type=int, default=None, help="extra solver starts per cell (default 8)")
        s.set_defaults(func=func)

    s = sub.add_parser("mi-club", parents=[common], help="CLUB MI estimate from paired samples")
    s.add_argument("--input", required=True, help="CSV with header x0,...,y0,...")
    s.set_defaults(func=cmd_mi_club)

    s = sub.add_parser("codec", parents=[base], help="arithmetic-code integer streams")
    s.add_argument("action", choices=("encode", "decode"))
    s.add_argument("--model", help="model JSON; encode fits a GMM when omitted")
    s.add_argument("--components", type=int, default=3)
    s.add_argument("--in", dest="input", required=True, help="whitespace-separated integers (encode) or payload (decode)")
    s.add_argument("--out", dest="output", required=True)
    s.set_defaults(func=cmd_codec)

    ch = sub.add_parser("channel", help="channel simulation")
    chsub = ch.add_subparsers(dest="channel_command", required=True)
    s = chsub.add_parser("ser", parents=[common], help="measure uncoded SER/BER")
    s.add_argument("--mod", choices=("bpsk", "qam16"), default="bpsk")
    s.add_argument("--kind", choices=channel.KINDS, default="awgn")
    s.add_argument("--fading", choices=("block", "symbol"), default="symbol")
    s.add_argument("--snr-db", required=True, help="comma-separated list")
    s.add_argument("--n", type=int, default=1_000_000)
    s.set_defaults(func=cmd_channel_ser)

    s = sub.add_parser("oracle", parents=[common], help="brute-force check on a tiny instance")
    s.add_argument("--source", help="source JSON (default: seeded random 4x3x2 instance)")
    s.add_argument("--lambda", dest="lam", type=float, required=True, help=LAMBDA_HELP)
    s.add_argument("--beta", type=float, default=0.0)
    s.add_argument("--step", type=float, default=0.05)
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("make-source", parents=[common], help="write a synthetic source JSON")
    s.add_argument("--n-symbols", type=int, default=4)
    s.add_argument("--n-labels", type=int, default=2)
    s.add_argument("--prior", choices=("uniform", "dirichlet"), default="uniform")
    s.add_argument("--hard", action="store_true")
    s.set_defaults(func=cmd_make_source)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except solver.InfeasibleError as exc:
        sys.stderr.write(f"infeasible: {exc}\n")
        return EXIT_INFEASIBLE
    except (OSError, codec.CodecError) as exc:
        sys.stderr.write(f"i/o error: {exc}\n")
        return EXIT_IO
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"invalid input: {exc}\n")
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
