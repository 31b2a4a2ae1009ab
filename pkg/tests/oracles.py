"""Independent reference implementations the tests check the library against.

Everything here is deliberately written the slow, obvious way (explicit
loops, bisection, exhaustive enumeration) and shares no code with the
library paths it verifies.
"""

import numpy as np


def triple_loop_forward(net, batch):
    """Dense forward pass with explicit index loops."""
    out = np.array(batch, dtype=np.float64)
    for layer in net.layers:
        nxt = np.zeros((out.shape[0], layer.out_dim))
        for b in range(out.shape[0]):
            for i in range(layer.out_dim):
                acc = layer.biases[i]
                for j in range(layer.in_dim):
                    acc += layer.weights[i, j] * out[b, j]
                nxt[b, i] = acc
        if layer.activation == "relu":
            nxt = np.where(nxt > 0, nxt, 0.0)
        out = nxt
    return out


def mean_ce_loss(net, batch, targets):
    """Mean batch cross-entropy via the library forward pass only."""
    from ccatlab.net import cross_entropy_soft, forward, softmax

    probs = softmax(forward(net, batch).logits)
    losses = cross_entropy_soft(probs, targets).value
    return float(np.mean(losses))


def fd_param_gradients(net, batch, targets, h=1e-5):
    """Central finite differences of the mean loss for every parameter."""
    grads = []
    for layer in net.layers:
        gw = np.zeros_like(layer.weights)
        for idx in np.ndindex(layer.weights.shape):
            orig = layer.weights[idx]
            layer.weights[idx] = orig + h
            up = mean_ce_loss(net, batch, targets)
            layer.weights[idx] = orig - h
            down = mean_ce_loss(net, batch, targets)
            layer.weights[idx] = orig
            gw[idx] = (up - down) / (2 * h)
        gb = np.zeros_like(layer.biases)
        for idx in np.ndindex(layer.biases.shape):
            orig = layer.biases[idx]
            layer.biases[idx] = orig + h
            up = mean_ce_loss(net, batch, targets)
            layer.biases[idx] = orig - h
            down = mean_ce_loss(net, batch, targets)
            layer.biases[idx] = orig
            gb[idx] = (up - down) / (2 * h)
        grads.append((gw, gb))
    return grads


def fd_input_gradient(net, x, target, h=1e-5):
    """Central finite differences of one example's own loss at its input."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for j in range(x.size):
        up_x = x.copy()
        up_x[j] += h
        down_x = x.copy()
        down_x[j] -= h
        grad[j] = (
            mean_ce_loss(net, up_x[None, :], target[None, :])
            - mean_ce_loss(net, down_x[None, :], target[None, :])
        ) / (2 * h)
    return grad


def rel_err(a, n, floor=1e-6):
    return np.abs(a - n) / np.maximum(floor, np.maximum(np.abs(a), np.abs(n)))


def safe_random_net(dims, seed, batch, margin=1e-3):
    """Random net whose pre-activations stay away from the relu kink on the
    given batch, so finite differences do not straddle the kink."""
    from ccatlab.net import forward, make_mlp

    rng = np.random.default_rng(seed)
    for _ in range(100):
        net = make_mlp(dims, rng)
        for layer in net.layers:
            layer.biases[:] = rng.uniform(-0.3, 0.3, size=layer.biases.shape)
        trace = forward(net, batch)
        closest = min(np.abs(z).min() for z in trace.pre_activations)
        if closest > margin:
            return net
    raise RuntimeError("could not find a kink-safe random net")


def l1_project_bisection(v, radius):
    """Projection onto the L1 ball by bisecting the KKT threshold."""
    v = np.asarray(v, dtype=np.float64)
    if np.abs(v).sum() <= radius:
        return v.copy()
    lo, hi = 0.0, float(np.abs(v).max())
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if np.maximum(np.abs(v) - mid, 0.0).sum() > radius:
            lo = mid
        else:
            hi = mid
    theta = (lo + hi) / 2.0
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def ks_statistic_uniform(xs):
    """Kolmogorov-Smirnov distance of a sample from Uniform[0, 1]."""
    xs = np.sort(np.asarray(xs, dtype=np.float64))
    n = xs.size
    d_plus = np.max(np.arange(1, n + 1) / n - xs)
    d_minus = np.max(xs - np.arange(0, n) / n)
    return max(float(d_plus), float(d_minus))


def grid_best_objective(net, x, y, epsilon, points=201, kind="conf"):
    """Exhaustive search over a grid of feasible 2-D perturbations."""
    from ccatlab.net import forward, softmax

    g = np.linspace(-epsilon, epsilon, points)
    dd = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    dd = np.clip(x[None, :] + dd, 0.0, 1.0) - x[None, :]
    probs = softmax(forward(net, x[None, :] + dd).logits)
    if kind == "conf":
        scores = probs.copy()
        scores[:, y] = -np.inf
        values = scores.max(axis=1)
    elif kind == "max":
        values = probs.max(axis=1)
    else:
        values = -np.log(np.maximum(probs[:, y], 1e-300))
    return float(values.max())


def perceptron_separates(inputs, labels, passes=200):
    """Plain perceptron; returns True if it finds a separating hyperplane."""
    X = np.concatenate([inputs, np.ones((inputs.shape[0], 1))], axis=1)
    y = np.where(np.asarray(labels) > 0, 1.0, -1.0)
    w = np.zeros(X.shape[1])
    for _ in range(passes):
        mistakes = 0
        for i in range(X.shape[0]):
            if y[i] * (X[i] @ w) <= 0:
                w += y[i] * X[i]
                mistakes += 1
        if mistakes == 0:
            return True
    return False


def count_te(records, tau):
    num = den = 0
    for r in records:
        if r.clean_conf >= tau:
            den += 1
            if r.clean_label != r.y:
                num += 1
    return (num / den) if den else 0.0


def count_rte(records, tau):
    num = den = 0
    for r in records:
        cp = r.clean_conf >= tau
        ap = bool(r.has_adv and r.adv_conf >= tau)
        if cp or ap:
            den += 1
        bad_clean = cp and r.clean_label != r.y
        bad_adv = ap and r.adv_label != r.y
        if bad_clean or bad_adv:
            num += 1
    return (num / den) if den else 0.0


def count_fpr(records, tau):
    num = den = 0
    for r in records:
        if r.clean_label == r.y and r.has_adv and r.adv_label != r.y:
            den += 1
            if r.adv_conf >= tau:
                num += 1
    return (num / den) if den else 0.0


def auc_pairwise(pos, neg):
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def threshold_scan(confidences, target_tpr):
    """Largest observed confidence whose TPR meets the target, by scanning."""
    confs = np.asarray(list(confidences), dtype=np.float64)
    m = confs.size
    best = None
    for tau in np.unique(confs):
        if (confs >= tau).sum() / m >= target_tpr - 1e-12:
            best = tau if best is None else max(best, tau)
    return best
