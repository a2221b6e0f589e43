"""Synthetic basin, model fit and design in one go."""
import argparse
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

from extremal_design.cli import main


@dataclass
class PipelineRun:
    out_dir: str = "results/pipeline"
    seed: int = 1
    threads: int = 1
    l_samp: int = 10
    n: int = 10_000
    u: float = 20.0
    refine: bool = True
    extend_margin: float = 0.0

    def steps(self) -> list:
        root = Path(self.out_dir)
        common = ["--seed", str(self.seed), "--threads", str(self.threads)]
        return [
            ["synthetic", "--out-dir", str(root / "data")] + common,
            ["fit", "--out-dir", str(root / "fit"), "--raster", str(root / "data/raster.npz"),
             "--stations-dir", str(root / "data/stations")] + common,
            ["design", "--out-dir", str(root / "design"), "--fit-dir", str(root / "fit"),
             "--basin", str(root / "data/basin.csv"), "--l-samp", str(self.l_samp), "--n", str(self.n),
             "--u", str(self.u), "--refine", str(self.refine), "--extend-margin", str(self.extend_margin)] + common,
        ]


def _bool(s: str) -> bool:
    return s.lower() in ("1", "true", "yes", "on")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    for k, v in asdict(PipelineRun()).items():
        ap.add_argument(f"--{k.replace('_', '-')}", type=_bool if isinstance(v, bool) else type(v), default=v)
    for argv in PipelineRun(**vars(ap.parse_args())).steps():
        code = main(argv)
        if code:
            sys.exit(code)
