"""Small gamma sweep on synthetic_c1: MSE rises and VCF falls as the penalty weight grows.

Usage: python3 demos/tradeoff_demo.py [n] [epochs]
"""
import sys

import numpy as np

from cip.baselines import train_baseline
from cip.dgp import dgp_catalog
from cip.evaluation import EvalConfig, fit_and_evaluate
from cip.scm import sample_observational
from cip.train import TrainConfig

n = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 50

scm = dgp_catalog("synthetic_c1")
train, test = sample_observational(scm, n, 0).split(0.8, 0)
ev = EvalConfig(d=200, k=200)

print(f"{'model':>10} {'mse':>10} {'hscic':>10} {'vcf':>10}")
for gamma in (0.0, 0.1, 1.0, 10.0):
    cfg = TrainConfig(gamma=gamma, epochs=epochs, batch_size=64)
    _, _, rep = fit_and_evaluate(train, test, cfg, scm, ev)
    print(f"{'g=' + str(gamma):>10} {rep.metric_value:10.4g} {rep.test_hscic:10.4g} {rep.vcf:10.4g}")
for kind in ("cf1", "cf2"):
    _, rep = train_baseline(kind, scm.graph, train, TrainConfig(epochs=epochs), scm=scm, test=test, eval_cfg=ev)
    print(f"{kind:>10} {rep.metric_value:10.4g} {rep.test_hscic:10.4g} {rep.vcf:10.4g}")
