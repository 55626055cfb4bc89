"""Full-protocol run on CIFAR-10 (five trials of 250k + 15k examples at k=400).

Expect on the order of ten CPU-hours: every phase-2 validation check re-encodes
the 10k validation images (~20 ms each at k=400). Outputs land in --out as
trial_<r>/{metrics.csv,model.bundle,maps/} plus summary.txt / summary.json.

    python scripts/reproduce_paper.py --data-dir cifar-10-batches-bin --out runs/paper
"""

import argparse
import sys

from learnpool.cli import main as cli_main

# reference accuracies for the same protocol (mean over five trials)
REFERENCE_BASELINE = 0.6756
REFERENCE_BEST = 0.6803


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data-dir", required=True)
    ap.add_argument("--out", default="runs/paper")
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--dry-run", action="store_true")
    args = ap.parse_args()

    argv = ["-v", "train", "--preset", "paper", "--data-dir", args.data_dir, "--out", args.out]
    if args.threads:
        argv += ["--threads", str(args.threads)]
    if args.dry_run:
        argv.append("--dry-run")
    code = cli_main(argv)
    if code == 0 and not args.dry_run:
        print(f"reference: baseline {REFERENCE_BASELINE:.4f}, best {REFERENCE_BEST:.4f}")
    return code


if __name__ == "__main__":
    sys.exit(main())
