"""Concurrent and exclusive exceedance curves for the four 1-D benchmark processes."""
import argparse
from dataclasses import asdict, dataclass

from extremal_design.cli import main


@dataclass
class BoundaryRun:
    out_dir: str = "results/boundary"
    seed: int = 0
    threads: int = 1
    batches: int = 100
    batch_size: int = 1000
    spacing: float = 0.1
    u: float = 1.0

    def argv(self) -> list:
        return ["boundary-experiment", "--out-dir", self.out_dir, "--seed", str(self.seed),
                "--threads", str(self.threads), "--batches", str(self.batches),
                "--batch-size", str(self.batch_size), "--spacing", str(self.spacing), "--u", str(self.u)]


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    for k, v in asdict(BoundaryRun()).items():
        ap.add_argument(f"--{k.replace('_', '-')}", type=type(v), default=v)
    raise SystemExit(main(BoundaryRun(**vars(ap.parse_args())).argv()))
