"""
Online linear models
====================

Both models learn one sample at a time and serialize to a short,
canonical text form that the contract stores on chain.
"""

import numpy as np

from chainlearn import models
from chainlearn.sim import DataSpec, generate_data

train, test, _ = generate_data(DataSpec(dimension=4, train_size=300, test_size=200), seed=3)

for kind, lr in (("perceptron", 1.0), ("logistic", 0.1)):
    m = models.make_model(kind, 4, lr)
    curve = []
    for start in range(0, len(train), 50):
        m = models.fold(m, train[start:start + 50])
        curve.append(models.evaluate(m, test))
    print(kind, np.round(curve, 3))
    print("  ", m.serialize()[:60], "...")

# a round trip through the wire form gives back the same model
assert models.deserialize(m.serialize()) == m
