import os

import numpy as np
import pytest

from certsurv.losses import Batch
from certsurv.network import init_network

DATA_DIR = os.path.join(os.path.dirname(__file__), "..", "data")


@pytest.fixture
def data_dir():
    return DATA_DIR


def random_net(rng, dims, slope=0.01, scale=1.0):
    """Network with uniform weights in [-scale, scale] and small biases."""
    net = init_network(dims, slope, seed=int(rng.integers(0, 2 ** 31)))
    for w in net.weights:
        w[:] = rng.uniform(-scale, scale, size=w.shape)
    for b in net.biases:
        b[:] = rng.uniform(-0.5, 0.5, size=b.shape)
    return net


def random_batch(rng, n, d, event_prob=0.6):
    X = rng.normal(size=(n, d))
    t = rng.uniform(0.2, 3.0, size=n)
    e = (rng.random(n) < event_prob).astype(int)
    if e.sum() == 0:
        e[0] = 1
    return Batch(X, t, e)


def central_diff(fn, setter, getter, h=1e-5):
    """Central finite difference of scalar fn under a parameter nudge."""
    orig = getter()
    setter(orig + h)
    fp = fn()
    setter(orig - h)
    fm = fn()
    setter(orig)
    return (fp - fm) / (2 * h)


def planted_linear_csv(path, n=40, seed=0, beta_scale=2.4):
    """Tiny dataset from a known exponential model with a planted linear
    risk over two numeric covariates; strong signal by construction."""
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, 2))
    G = beta_scale * z[:, 0] - beta_scale * z[:, 1] - 1.5
    t_event = rng.exponential(1.0 / np.exp(G))
    t_cens = rng.exponential(12.0, size=n)
    time = np.minimum(t_event, t_cens)
    event = (t_event <= t_cens).astype(int)
    time = np.maximum(np.round(time, 4), 1e-4)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("pid,event,time,num_a,num_b\n")
        for i in range(n):
            fh.write(f"{i},{event[i]},{time[i]:.4f},{z[i,0]:.5f},{z[i,1]:.5f}\n")
    return path
