"""Independent reference computations shared by unit and acceptance tests."""

import numpy as np

from vecedge.nn import Mlp, backward, forward, init_mlp


def numpy_mlp(net: Mlp, x):
    """Straight re-evaluation of an MLP without the library's forward pass."""
    h = np.asarray(x, dtype=float)
    for layer in net.layers:
        z = np.einsum("oi,...i->...o", layer.weight.astype(float), h) + layer.bias
        h = {"relu": lambda t: np.where(t > 0, t, 0.0), "tanh": np.tanh, "identity": lambda t: t}[layer.activation](z)
    return h


def finite_difference_check(net: Mlp, x, g, rng, h=1e-5, per_tensor=40):
    """Worst relative error between backprop and central differences.

    The scalar probed is sum(net(x) * g). Up to ``per_tensor`` entries of every
    weight, bias and input tensor are checked.
    """
    def loss():
        return float(np.sum(numpy_mlp(net, x) * g))

    out, cache = forward(net, x)
    grads, grad_in = backward(net, cache, g)
    worst = 0.0
    pairs = []
    for layer, (dw, db) in zip(net.layers, grads):
        pairs += [(layer.weight, dw), (layer.bias, db)]
    for p, analytic in pairs:
        flat = p.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            num = (up - down) / (2 * h)
            worst = max(worst, _rel(analytic.reshape(-1)[i], num))
    xf = np.array(x, dtype=float)
    flat = xf.reshape(-1)
    for i in rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False):
        old = flat[i]
        flat[i] = old + h
        up = float(np.sum(numpy_mlp(net, xf) * g))
        flat[i] = old - h
        down = float(np.sum(numpy_mlp(net, xf) * g))
        flat[i] = old
        worst = max(worst, _rel(np.asarray(grad_in).reshape(-1)[i], (up - down) / (2 * h)))
    return worst


def _rel(a, b, floor=1e-7):
    return abs(a - b) / max(abs(a), abs(b), floor)


def random_network(rng, sizes, acts):
    net = init_mlp(sizes, acts, rng, dtype=np.float64)
    for layer in net.layers:
        layer.bias += rng.normal(0, 0.1, layer.bias.shape)
    return net


def gradient_check_suite(seed=0):
    """20 random networks: both production shapes (actor and critic, desk and
    full scale) plus assorted small ones. Returns the worst relative error."""
    rng = np.random.default_rng(seed)
    shapes = [
        ([10, 128, 128, 4], ["relu", "relu", "tanh"]),  # desk actor
        ([14, 128, 128, 6], ["relu", "relu", "tanh"]),  # full-scale actor
        ([52, 256, 256, 1], ["relu", "relu", "identity"]),  # desk centralized critic
        ([14, 256, 256, 1], ["relu", "relu", "identity"]),  # independent critic
    ]
    while len(shapes) < 20:
        depth = int(rng.integers(1, 4))
        sizes = [int(s) for s in rng.integers(1, 9, depth + 1)]
        acts = [str(a) for a in rng.choice(["relu", "tanh", "identity"], depth)]
        shapes.append((sizes, acts))
    worst = 0.0
    for sizes, acts in shapes:
        net = random_network(rng, sizes, acts)
        batch = int(rng.integers(1, 5))
        x = rng.normal(0, 1, (batch, sizes[0]))
        g = rng.normal(0, 1, (batch, sizes[-1]))
        worst = max(worst, finite_difference_check(net, x, g, rng))
    return worst


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
