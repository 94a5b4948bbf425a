"""Complete-linkage clustering of per-layer GradNAPs and Silhouette-based layer summaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PERCENTILES = (75, 80, 85, 90, 95)


class UndefinedScore(ValueError):
    """Silhouette is undefined for a single cluster or all-singleton clusterings."""


@dataclass
class DistanceMatrix:
    condensed: np.ndarray  # d(0,1), d(0,2), ..., d(1,2), ...
    labels: list

    @property
    def n(self) -> int:
        return len(self.labels)

    def square(self) -> np.ndarray:
        n = self.n
        out = np.zeros((n, n))
        iu = np.triu_indices(n, k=1)
        out[iu] = self.condensed
        out[iu[1], iu[0]] = self.condensed
        return out


def pairwise_distances(items, labels=None, normalize: bool = False) -> DistanceMatrix:
    """Euclidean distances between flattened matrices.

    ``normalize`` divides by sqrt(dimension), for comparing layers of
    different width; off by default.
    """
    items = [np.asarray(m, dtype=np.float64) for m in items]
    if len(items) < 2:
        raise ValueError("need at least two items")
    shape = items[0].shape
    for i, m in enumerate(items):
        if m.shape != shape:
            raise ValueError(f"item {i} has shape {m.shape}, expected {shape}")
    flat = np.stack([m.ravel() for m in items])
    n = len(items)
    i, j = np.triu_indices(n, k=1)
    d = np.sqrt(((flat[i] - flat[j]) ** 2).sum(axis=1))
    if normalize:
        d = d / np.sqrt(flat.shape[1])
    return DistanceMatrix(d, list(labels) if labels is not None else list(range(n)))


@dataclass
class Merge:
    left: int  # cluster ids: 0..n-1 are items, n+k is the cluster made by merge k
    right: int
    height: float
    size: int


@dataclass
class LinkageTree:
    n: int
    merges: list = field(default_factory=list)


def complete_linkage(dm: DistanceMatrix) -> LinkageTree:
    """Agglomerative clustering; cluster distance is the largest member-pair distance.

    Ties go to the lexicographically smallest pair of cluster ids.
    """
    n = dm.n
    if n < 2:
        raise ValueError("need at least two items")
    sq = dm.square()
    dist = {}
    for a in range(n):
        for b in range(a + 1, n):
            dist[a, b] = sq[a, b]
    sizes = {i: 1 for i in range(n)}
    tree = LinkageTree(n)
    for k in range(n - 1):
        active = sorted(sizes)
        best = None
        for ia, a in enumerate(active):
            for b in active[ia + 1:]:
                d = dist[a, b]
                if best is None or d < best[0]:
                    best = (d, a, b)
        d, a, b = best
        new = n + k
        for c in active:
            if c not in (a, b):
                dist[c, new] = max(dist[min(a, c), max(a, c)], dist[min(b, c), max(b, c)])
        sizes[new] = sizes.pop(a) + sizes.pop(b)
        tree.merges.append(Merge(a, b, float(d), sizes[new]))
    return tree


def cut_tree(tree: LinkageTree, threshold: float) -> np.ndarray:
    """Cluster labels after keeping merges with height <= threshold.

    Labels are numbered by first appearance in item order.
    """
    parent = list(range(tree.n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    rep = {i: i for i in range(tree.n)}  # cluster id -> one member item
    for k, m in enumerate(tree.merges):
        rep[tree.n + k] = rep[m.left]
        if m.height <= threshold:
            parent[find(rep[m.right])] = find(rep[m.left])
    roots = [find(i) for i in range(tree.n)]
    order = {}
    return np.array([order.setdefault(r, len(order)) for r in roots])


def percentile_thresholds(dm: DistanceMatrix, percentiles=PERCENTILES) -> np.ndarray:
    """Percentiles of the condensed distances, linear interpolation between closest ranks."""
    if len(dm.condensed) < 1:
        raise ValueError("no distances")
    return np.percentile(dm.condensed, percentiles, method="linear")


def silhouette(dm: DistanceMatrix, assignment) -> float:
    """Mean silhouette width; singletons contribute 0."""
    labels = np.asarray(assignment)
    clusters = np.unique(labels)
    n = len(labels)
    if not 2 <= len(clusters) <= n - 1:
        raise UndefinedScore(f"silhouette undefined for {len(clusters)} clusters of {n} items")
    sq = dm.square()
    s = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = sq[i, own].sum() / (own.sum() - 1)
        b = min(sq[i, labels == c].mean() for c in clusters if c != labels[i])
        top = max(a, b)
        s[i] = 0.0 if top == 0 else (b - a) / top
    return float(s.mean())


@dataclass
class ThresholdScore:
    percentile: int
    threshold: float
    clusters: int
    score: float | None  # None where undefined


@dataclass
class LayerSilhouette:
    layer: int
    rows: list
    mean: float | None
    tree: LinkageTree
    distances: DistanceMatrix
    assignments: list  # one label array per threshold


@dataclass
class SilhouetteReport:
    layers: list

    def rows(self):
        for ls in self.layers:
            for r in ls.rows:
                yield ls.layer, r

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "layer": ls.layer,
                    "mean": ls.mean,
                    "thresholds": [
                        {"percentile": r.percentile, "threshold": r.threshold,
                         "clusters": r.clusters, "score": r.score}
                        for r in ls.rows
                    ],
                }
                for ls in self.layers
            ]
        }


def summarize_layer(layer: int, items, labels, normalize: bool = False) -> LayerSilhouette:
    dm = pairwise_distances(items, labels, normalize)
    tree = complete_linkage(dm)
    rows, assignments = [], []
    for p, t in zip(PERCENTILES, percentile_thresholds(dm)):
        assign = cut_tree(tree, t)
        try:
            score = silhouette(dm, assign)
        except UndefinedScore:
            score = None
        rows.append(ThresholdScore(p, float(t), int(assign.max()) + 1, score))
        assignments.append(assign)
    defined = [r.score for r in rows if r.score is not None]
    mean = float(np.mean(defined)) if defined else None
    return LayerSilhouette(layer, rows, mean, tree, dm, assignments)


def layer_silhouette_summary(gradnaps: dict, normalize: bool = False) -> SilhouetteReport | None:
    """Per layer: complete-linkage tree over groups, cuts at the five percentile thresholds, scores.

    ``gradnaps`` maps group -> list of per-layer GradNAPs. Returns None for
    fewer than two groups.
    """
    groups = list(gradnaps)
    if len(groups) < 2:
        return None
    n_layers = len(gradnaps[groups[0]])
    layers = []
    for l in range(n_layers):
        items = [gradnaps[g][l].values for g in groups]
        layers.append(summarize_layer(l, items, groups, normalize))
    return SilhouetteReport(layers)


def compare_schemes(reports: dict) -> list[dict]:
    """Per-layer mean scores side by side for several grouping schemes."""
    layers = sorted({ls.layer for rep in reports.values() for ls in rep.layers})
    table = []
    for l in layers:
        row = {"layer": l}
        for name, rep in reports.items():
            match = [ls.mean for ls in rep.layers if ls.layer == l]
            row[name] = match[0] if match else None
        table.append(row)
    return table


def newick(tree: LinkageTree, labels) -> str:
    """Newick string; each branch length is parent height minus child height."""
    heights = {i: 0.0 for i in range(tree.n)}
    text = {i: _newick_label(labels[i]) for i in range(tree.n)}
    for k, m in enumerate(tree.merges):
        cid = tree.n + k
        heights[cid] = m.height
        text[cid] = "({}:{!r},{}:{!r})".format(
            text[m.left], m.height - heights[m.left], text[m.right], m.height - heights[m.right]
        )
    return text[tree.n + len(tree.merges) - 1] + ";"


def _newick_label(label) -> str:
    s = str(label)
    if any(c in s for c in " ():;,[]'\t"):
        return "'" + s.replace("'", "''") + "'"
    return s
