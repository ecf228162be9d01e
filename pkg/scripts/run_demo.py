"""Run the full pipeline on the shipped demo scenario and print the summary."""
import argparse
import json
from pathlib import Path

from probecount.config import load_scenario
from probecount.pipeline import run_pipeline

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=ROOT / "configs" / "demo.json", type=Path)
    ap.add_argument("--out", default=ROOT / "out" / "demo", type=Path)
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()
    cfg = load_scenario(args.config).with_overrides(seed=args.seed)
    res = run_pipeline(cfg, args.out)
    print(json.dumps(res.summary, indent=2, sort_keys=True))
    for name, path in sorted(res.artifacts.items()):
        print(f"{name:12s} {path}")


if __name__ == "__main__":
    main()
