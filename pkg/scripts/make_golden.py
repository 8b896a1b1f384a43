"""Validate the reference run against independent oracles, then freeze it as test fixtures.

Writes tests/data/reference_golden.csv (pipeline output, byte-compared by the
suite) and tests/data/reference_constants.json (pinned trade-off values).
Refuses to write anything if a check fails.

    python3 scripts/make_golden.py [--step 0.02]
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from semrd.estimators import discrete_mi_report
from semrd.experiments import ExperimentConfig, format_results, reference_source, run_pipeline, transfer_eval
from semrd.solver import SolverConfig, brute_force_solve, solve

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"

GOLDEN_CONFIG = dict(lambda_grid=[1.0], beta_grid=[0.0, 0.1, 0.5, 2.0, 10.0, 50.0],
                     flip_grid=[0.0, 0.05, 0.1, 0.2], mapping_mode="argmax", restarts=8)
LAM = 1.0
BETAS = [0.0, 0.5, 2.0, 10.0, 50.0]
RESTARTS = 8


def restricted_oracle(src, cfg, step):
    """Best grid optimum over every 3-reconstruction sub-alphabet.

    Each restriction is a feasible sub-problem, so its optimum upper-bounds
    the full optimum; the solver must not do worse than the best of them.
    """
    d = np.asarray(src.pixel_distortion())
    nz = d.shape[1]
    best = np.inf
    for drop in range(nz):
        keep = [j for j in range(nz) if j != drop]
        best = min(best, brute_force_solve(src, d[:, keep], cfg, step)[1])
    return best


def textbook_ba(px, d, lam, iters=100_000):
    q = np.full(d.shape[1], 1.0 / d.shape[1])
    A = np.exp(-d / lam)
    for _ in range(iters):
        Q = q * A
        Q /= Q.sum(axis=1, keepdims=True)
        q_new = px @ Q
        if np.max(np.abs(q_new - q)) < 1e-15:
            break
        q = q_new
    Q = q * A
    return Q / Q.sum(axis=1, keepdims=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--step", type=float, default=0.02)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)

    src = reference_source()
    px = np.asarray(src.px)
    ok = True
    solved = {}
    for beta in BETAS:
        cfg = SolverConfig(lam=LAM, beta=beta, restarts=RESTARTS)
        res = solve(src, None, cfg)
        oracle = restricted_oracle(src, cfg, args.step)
        gap = res.lagrangian - oracle
        print(f"beta={beta:<5g} L={res.lagrangian:.9f} oracle={oracle:.9f} gap={gap:+.2e} "
              f"converged={res.converged} residual={res.residual:.1e}")
        ok &= gap <= 1e-3 and res.converged and res.residual < 1e-6
        solved[beta] = res

    classical = textbook_ba(px, np.asarray(src.pixel_distortion()), LAM)
    drift = float(np.max(np.abs(classical - np.asarray(solved[0.0].mapping))))
    print(f"beta=0 vs textbook BA: max mapping difference {drift:.1e}")
    ok &= drift < 1e-8
    if not ok:
        print("validation failed; fixtures left untouched", file=sys.stderr)
        return 1

    mi = {b: discrete_mi_report(px, r.mapping, src.py_given_x) for b, r in solved.items()}
    transfer = {t.beta: t for t in transfer_eval(src, {b: np.asarray(r.mapping) for b, r in solved.items()})}
    constants = {
        "lambda": LAM,
        "restarts": RESTARTS,
        "source_i_xy_bits": discrete_mi_report(px, np.eye(src.n_symbols), src.py_given_x)["i_xhat_y_bits"],
        "by_beta": {
            str(b): {
                "lagrangian": solved[b].lagrangian,
                "rate_bits": mi[b]["i_x_xhat_bits"],
                "i_xhat_y_bits": mi[b]["i_xhat_y_bits"],
                "mse": solved[b].pixel_distortion,
                "task_a_accuracy": transfer[b].task_a_accuracy,
                "task_b_accuracy": transfer[b].task_b_accuracy,
            }
            for b in BETAS
        },
    }
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "reference_constants.json").write_text(json.dumps(constants, indent=2) + "\n")
    records = run_pipeline(ExperimentConfig(**GOLDEN_CONFIG))
    (args.out / "reference_golden.csv").write_text(format_results(records, "csv"))
    print(f"wrote {args.out / 'reference_constants.json'} and {args.out / 'reference_golden.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
