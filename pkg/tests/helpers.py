"""Small network builders shared by the SNN tests."""

import numpy as np

from quantsnn.network import QuantNet
from quantsnn.quant import QuantActLayer, make_rng
from quantsnn.tensor import AffineLayer


def identity_layer_net(p: int, s: float, width: int = 1) -> QuantNet:
    """x -> quant(x) -> sum; each input drives its own neuron with unit weight."""
    return QuantNet([
        AffineLayer(np.eye(width), np.zeros(width)),
        QuantActLayer(p, s),
        AffineLayer(np.ones((1, width)), np.zeros(1)),
    ])


def random_net(sizes, p: int, seed: int = 0) -> QuantNet:
    net = QuantNet.mlp(list(sizes), p=p, seed=seed)
    rng = make_rng(seed, 77)
    for q in net.quant_layers:
        q.s, q.initialized = float(rng.uniform(0.2, 0.6)), True
    for a in net.affine_layers:
        a.B[:] = rng.normal(0, 0.2, a.B.shape)
    return net
