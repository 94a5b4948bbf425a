import itertools

import numpy as np
import pytest

from gradnap import data, model, netcore


def random_arch(rng, max_layers=4, max_channels=8, activations=("relu", "tanh", "identity")):
    n_layers = int(rng.integers(1, max_layers + 1))
    bins = int(rng.integers(1, max_channels + 1))
    layers = []
    for i in range(n_layers):
        layers.append(dict(
            out_channels=int(rng.integers(1, max_channels + 1)),
            kernel=int(rng.integers(1, 5)),
            stride=int(rng.integers(1, 3)),
            activation=str(rng.choice(activations)) if i < n_layers - 1 else "identity",
        ))
    return netcore.ArchitectureSpec.build(bins, layers)


def random_model(rng, **kw):
    spec = random_arch(rng, **kw)
    weights = netcore.init_weights(spec, rng)
    weights.biases = [rng.normal(0, 0.3, b.shape) for b in weights.biases]
    return spec, weights


def random_input(rng, spec, extra=None):
    need = netcore.receptive_field(spec, spec.num_layers).size
    extra = int(rng.integers(0, 6)) if extra is None else extra
    return rng.normal(size=(spec.input_bins, need + extra))


def relu_pattern(spec, weights, l, a):
    tr = netcore.forward_from(spec, weights, l, a)
    return [None if z is None else z > 0 for z in tr.pre]


def fd_logit(spec, weights, l, act, pos, c, t, h=1e-5):
    """Central difference of logit[c, t] w.r.t. act[l][pos]; None if a relu kink is crossed."""
    plus, minus = act.copy(), act.copy()
    plus[pos] += h
    minus[pos] -= h
    pp, pm = relu_pattern(spec, weights, l, plus), relu_pattern(spec, weights, l, minus)
    if any(a is not None and not np.array_equal(a, b) for a, b in zip(pp, pm)):
        return None
    fp = netcore.forward_from(spec, weights, l, plus).logits[c, t]
    fm = netcore.forward_from(spec, weights, l, minus).logits[c, t]
    return (fp - fm) / (2 * h)


def rel_err(a, n, floor=1e-6):
    return abs(a - n) / max(abs(a), abs(n), floor)


def naive_conv(x, w, b, stride):
    c_out, c_in, k = w.shape
    t_out = (x.shape[1] - k) // stride + 1
    out = np.zeros((c_out, t_out))
    for o in range(c_out):
        for t in range(t_out):
            s = b[o]
            for i in range(c_in):
                for j in range(k):
                    s += w[o, i, j] * x[i, t * stride + j]
            out[o, t] = s
    return out


def naive_complete_linkage(sq):
    """O(n^3) reference: recompute every cluster distance from member pairs each round."""
    n = len(sq)
    clusters = {i: [i] for i in range(n)}
    heights = []
    for k in range(n - 1):
        best = None
        for a, b in itertools.combinations(sorted(clusters), 2):
            d = max(sq[i, j] for i in clusters[a] for j in clusters[b])
            if best is None or d < best[0]:
                best = (d, a, b)
        d, a, b = best
        clusters[n + k] = clusters.pop(a) + clusters.pop(b)
        heights.append((a, b, d))
    return heights


def partition(labels):
    groups = {}
    for i, l in enumerate(labels):
        groups.setdefault(l, set()).add(i)
    return {frozenset(g) for g in groups.values()}


def silhouette_oracle(sq, labels):
    n = len(labels)
    total = 0.0
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            continue
        a = sum(sq[i, j] for j in own) / len(own)
        b = min(np.mean([sq[i, j] for j in range(n) if labels[j] == c])
                for c in set(labels) if c != labels[i])
        total += 0.0 if max(a, b) == 0 else (b - a) / max(a, b)
    return total / n


ACCEPT_CLASSES = [
    data.ClassSpec("a", [(6, 2, 3.0)]),
    data.ClassSpec("b", [(16, 2, 3.0)]),
    data.ClassSpec("c", [(25, 2, 3.0)]),
]
ACCEPT_ARCH = netcore.ArchitectureSpec.build(32, [
    dict(out_channels=16, kernel=5, stride=1, activation="tanh"),
    dict(out_channels=16, kernel=5, stride=2, activation="tanh"),
    dict(out_channels=4, kernel=3, stride=1, activation="identity"),
])


@pytest.fixture(scope="session")
def toy():
    """Three band classes, trained three-layer model: (arch, weights, dataset)."""
    ds = data.generate(ACCEPT_CLASSES, 80, 32, 100, 1.0, seed=5)
    weights = model.train_toy(ACCEPT_ARCH, ds, model.TrainConfig(epochs=40, batch_size=8, lr=0.03, seed=0))
    return ACCEPT_ARCH, weights, ds


# -- acceptance summary ---------------------------------------------------------

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True})
    entry["ok"] &= report.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        terminalreporter.write_line(f"{'PASS' if entry['ok'] else 'FAIL'} criterion {number}: {entry['title']}")
