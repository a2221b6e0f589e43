"""Sequential addition of sites on the 1-D weak benchmark, boundary and random initialization."""
import argparse
from dataclasses import asdict, dataclass

from extremal_design.cli import main


@dataclass
class IterativeRun:
    out_dir: str = "results/iterative"
    seed: int = 0
    threads: int = 1
    process: str = "pareto-weak"
    n: int = 10_000
    additions: int = 4
    random_init: int = 2
    random_runs: int = 20

    def argv(self) -> list:
        return ["iterative-experiment", "--out-dir", self.out_dir, "--seed", str(self.seed),
                "--threads", str(self.threads), "--process", self.process, "--n", str(self.n),
                "--additions", str(self.additions), "--random-init", str(self.random_init),
                "--random-runs", str(self.random_runs)]


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    for k, v in asdict(IterativeRun()).items():
        ap.add_argument(f"--{k.replace('_', '-')}", type=type(v), default=v)
    raise SystemExit(main(IterativeRun(**vars(ap.parse_args())).argv()))
