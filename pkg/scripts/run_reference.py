"""Sweeps on the reference source, written as CSV files.

    python3 scripts/run_reference.py [--out results/] [--restarts 8]

Produces:
  lambda_sweep.csv   beta = 0, lambda over a log grid, flip = 0
  beta_sweep.csv     lambda = 1, beta over a grid, flips 0 / 0.05 / 0.1 / 0.2
  snr_sweep.csv      lambda = 1, beta in {0, 2}, AWGN SNR 0..20 dB
  transfer.csv       task A / task B accuracy per beta at lambda = 1
  channel.csv        measured vs closed-form BPSK error rates
"""
import argparse
import csv
import logging
from pathlib import Path

import numpy as np

from semrd.channel import ChannelConfig, bpsk_awgn_ser, bpsk_rayleigh_ber, measure_ser
from semrd.experiments import ExperimentConfig, emit_results, reference_source, run_pipeline, solve_for_betas, transfer_eval


def write_rows(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--restarts", type=int, default=8)
    ap.add_argument("--n-symbols", type=int, default=200_000, help="channel Monte-Carlo size")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    src = reference_source()

    runs = {
        "lambda_sweep.csv": ExperimentConfig(lambda_grid=list(np.geomspace(0.05, 5.0, 12)), beta_grid=[0.0],
                                             flip_grid=[0.0], restarts=args.restarts),
        "beta_sweep.csv": ExperimentConfig(beta_grid=[0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0],
                                           flip_grid=[0.0, 0.05, 0.1, 0.2], restarts=args.restarts),
        "snr_sweep.csv": ExperimentConfig(beta_grid=[0.0, 2.0], snr_grid=[0, 2, 4, 6, 8, 10, 15, 20],
                                          restarts=args.restarts),
    }
    for name, cfg in runs.items():
        emit_results(run_pipeline(cfg, src), out / name)
        logging.info("wrote %s", out / name)

    betas = [0.0, 0.5, 2.0, 10.0, 50.0]
    recs = transfer_eval(src, solve_for_betas(src, 1.0, betas, restarts=args.restarts))
    write_rows(out / "transfer.csv", ["beta", "task_a_accuracy", "task_b_accuracy"],
               [(r.beta, r.task_a_accuracy, r.task_b_accuracy) for r in recs])
    logging.info("wrote %s", out / "transfer.csv")

    rows = []
    for snr in range(0, 21, 2):
        ser, _ = measure_ser("bpsk", ChannelConfig(snr_db=snr, seed=snr), args.n_symbols)
        _, ber = measure_ser("bpsk", ChannelConfig(kind="rayleigh", fading="symbol", snr_db=snr, seed=100 + snr),
                             args.n_symbols)
        rows.append((snr, ser, float(bpsk_awgn_ser(snr)), ber, float(bpsk_rayleigh_ber(snr))))
    write_rows(out / "channel.csv", ["snr_db", "awgn_ser", "awgn_theory", "rayleigh_ber", "rayleigh_theory"], rows)
    logging.info("wrote %s", out / "channel.csv")


if __name__ == "__main__":
    main()
