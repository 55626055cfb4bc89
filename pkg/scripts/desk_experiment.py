"""Desk-scale run of the full schedule on synthetic data, optionally sweeping the map learning rate.

    python scripts/desk_experiment.py --trials 5 --eta-pool 5e-5 1e-4 1e-3
"""

import argparse
import logging

from learnpool import dataset, training
from learnpool.config import preset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eta-pool", type=float, nargs="+", default=[5e-5])
    ap.add_argument("--sigma-floor", type=float, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    cfg = preset("desk").replace(trials=args.trials, seed=args.seed)
    if args.sigma_floor is not None:
        cfg = cfg.replace(sigma_floor=args.sigma_floor)
    samples = dataset.generate_synthetic(cfg.synthetic_count, cfg.n, cfg.seed)
    for eta in args.eta_pool:
        summary = training.run_trials(cfg.replace(eta_pool=eta), samples)
        print(f"== eta_pool={eta:g} sigma_floor={cfg.sigma_floor:g}")
        print(summary.format())


if __name__ == "__main__":
    main()
