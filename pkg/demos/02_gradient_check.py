"""Checking the hand-written backward pass against finite differences.

Builds the tiny 2-layer encoder with each head, moves the parameters away
from the small init (where many gradients are below the finite-difference
noise floor) and compares every analytic gradient to central differences.
"""

import numpy as np

from codemix.model import CLASSIFIER, MLM, ModelConfig, init_model, loss_and_grads, swap_head
from codemix.numerics import grad_check
from codemix.tokenizer import CLS, PAD

cfg = ModelConfig(n_layers=2, hidden=8, n_heads=2, ff_dim=16, vocab_size=32, max_len=8)
rng = np.random.default_rng(0)
ids = rng.integers(5, 32, (2, 8))
ids[:, 0] = CLS
mask = np.ones((2, 8), dtype=np.int64)
mask[1, 5:], ids[1, 5:] = 0, PAD

for head in (MLM, CLASSIFIER):
    model = init_model(cfg, 0)
    if head == CLASSIFIER:
        model = swap_head(model, CLASSIFIER, 0)
    for name, p in model.params.items():
        if not name.endswith("gamma"):
            model.params[name] = rng.normal(0.0, 0.3, p.shape)
    if head == MLM:
        positions, targets = np.array([[0, 3], [1, 2]]), np.array([7, 9])
    else:
        positions, targets = None, np.array([0, 2])
    names = list(model.params)

    def f(*arrays):
        model.params.update(zip(names, arrays))
        loss, grads, _ = loss_and_grads(model, ids, mask, targets, positions, train=True, seed=1)
        return loss, [grads[n] for n in names]

    report = grad_check(f, [model.params[n] for n in names])
    print(f"{head:10s} {report.n_checked} entries, max relative error {report.max_rel_error:.2e}")
