"""PAD matrix and 2D MDS map for synthetic cohorts with graded shifts.

Six cohorts: two near-identical offerings, two with scaled activity and two
with perturbed correlations.  Thin wrapper over ``dropout-transfer pad``.

    python scripts/course_similarity.py --out runs/similarity
"""

import argparse
import json
import tempfile
from pathlib import Path

from dropout_transfer import cli

COHORTS = [
    ("A1", {}),
    ("A2", {}),
    ("B1", {"frequency_scale": {"play_video": 0.5, "pause_video": 0.5, "load_video": 0.5}}),
    ("B2", {"frequency_scale": {"play_video": 0.4, "pause_video": 0.4, "load_video": 0.4}}),
    ("C1", {"correlation_perturbation": 0.8, "frequency_scale": {"problem_check": 3.0}}),
    ("C2", {"correlation_perturbation": 0.9, "frequency_scale": {"problem_check": 3.5}}),
]


def config(n_students: int) -> dict:
    return {"name": "similarity",
            "cohorts": [{"name": name, "synth": {"n_students": n_students, "seed": 700 + i, "shift": shift}}
                        for i, (name, shift) in enumerate(COHORTS)]}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/similarity")
    p.add_argument("--n-students", type=int, default=1000)
    p.add_argument("--mode", choices=["pooled", "per-slice"], default="pooled")
    args = p.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "similarity.json"
        path.write_text(json.dumps(config(args.n_students)))
        code = cli.main(["pad", "--config", str(path), "--mode", args.mode, "--out", args.out])
    if code == 0:
        print((Path(args.out) / "pad_matrix.csv").read_text().split("\n# }\n")[-1])
    return code


if __name__ == "__main__":
    raise SystemExit(main())
