"""In-domain predictor comparison: logistic regression, LSTM on raw features,
CNN on the LSTM-autoencoder embedding.  Writes one row per (week, seed, model).

    python scripts/model_selection.py --out runs/model_selection.csv
"""

import argparse
import csv
from dataclasses import dataclass, replace

import numpy as np

from dropout_transfer import nn
from dropout_transfer.data import slice_for_week
from dropout_transfer.evaluation import auc
from dropout_transfer.synth import GeneratorConfig, generate_cohort
from dropout_transfer.transfer import MethodConfig, no_transfer_split, train_no_transfer


@dataclass
class SelectionConfig:
    n_students: int = 2000
    weeks: tuple = (2, 3, 4, 5, 6)
    seeds: tuple = (0, 1, 2)
    epochs: int = 40
    predictor_learning_rate: float = 0.005


def logistic_regression(X, y, config: MethodConfig) -> nn.Network:
    net = nn.build_network([nn.Flatten(), nn.Dense(1), nn.Sigmoid()], X.shape[1:], config.seed)
    nn.init_output_bias(net, np.mean(y))
    nn.fit(net, X, y.astype(float), "bce", config.training(predictor=True))
    return net


def evaluate(cohort, week, mc):
    X, y, _ = slice_for_week(cohort, week)
    train, test = no_transfer_split(len(X), mc)
    out = {"LR": auc(logistic_regression(X[train], y[train], mc).forward(X[test]).ravel(), y[test])}
    for name, use_ae in (("LSTM", False), ("CNN-on-AE", True)):
        pred, idx = train_no_transfer(cohort, week, mc, use_ae=use_ae)
        out[name] = auc(pred.predict(X[idx]), y[idx])
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/model_selection.csv")
    p.add_argument("--n-students", type=int, default=SelectionConfig.n_students)
    args = p.parse_args()
    cfg = replace(SelectionConfig(), n_students=args.n_students)

    rows = []
    for seed in cfg.seeds:
        cohort = generate_cohort(GeneratorConfig(n_students=cfg.n_students, seed=500 + seed))
        mc = MethodConfig(epochs=cfg.epochs, predictor_learning_rate=cfg.predictor_learning_rate, seed=seed)
        for week in cfg.weeks:
            for model, value in evaluate(cohort, week, mc).items():
                rows.append((week, seed, model, value))
                print(f"week {week} seed {seed} {model:10s} {value:.4f}")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["week", "seed", "model", "auc"])
        w.writerows(rows)
    for model in ("LR", "LSTM", "CNN-on-AE"):
        print(f"{model:10s} mean AUC {np.mean([r[3] for r in rows if r[2] == model]):.4f}")


if __name__ == "__main__":
    main()
