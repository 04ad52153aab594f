"""Privacy risk score: a per-label histogram posterior of membership.

A shadow model supplies modified-entropy scores for points it trained on
(members) and points it never saw (non-members). Per label, both score sets
are binned on a shared uniform grid; the risk score of a new point is the
posterior probability of membership given its bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import FitError

CLIP = 1e-12


def modified_entropy(probabilities, label) -> float:
    """``-(1 - p_y) log p_y - sum_{i != y} p_i log(1 - p_i)``, with p clipped away from 0 and 1."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 1 or np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probabilities must form a simplex")
    if not 0 <= label < p.size:
        raise ValueError(f"label {label} outside [0, {p.size})")
    return float(modified_entropy_batch(p[None, :], np.array([label]))[0])


def modified_entropy_batch(probabilities, labels) -> np.ndarray:
    p = np.clip(np.asarray(probabilities, dtype=np.float64), CLIP, 1.0 - CLIP)
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(p.shape[0])
    py = p[rows, labels]
    other = -p * np.log(1.0 - p)
    other[rows, labels] = 0.0
    return -(1.0 - py) * np.log(py) + other.sum(axis=1)


@dataclass
class PrsModel:
    bins_per_label: int
    smoothing: float
    bin_edges: dict
    member_hist: dict
    nonmember_hist: dict
    prior_member: float = 0.5

    def _freq(self, label, k):
        s = self.smoothing
        mem = self.member_hist[label]
        non = self.nonmember_hist[label]
        f_mem = (mem[k] + s) / (mem.sum() + s * self.bins_per_label)
        f_non = (non[k] + s) / (non.sum() + s * self.bins_per_label)
        return f_mem, f_non

    def bin_of(self, label, score):
        edges = self.bin_edges[label]
        k = np.searchsorted(edges, score, side="right") - 1
        return np.clip(k, 0, self.bins_per_label - 1)

    def score(self, score, label) -> float:
        return float(self.score_many([score], [label])[0])

    def score_many(self, scores, labels) -> np.ndarray:
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels)
        out = np.empty(scores.size)
        pi = self.prior_member
        for n, (sc, lab) in enumerate(zip(scores, labels)):
            lab = int(lab)
            if lab not in self.bin_edges:
                raise ValueError(f"label {lab} was not seen when fitting")
            f_mem, f_non = self._freq(lab, self.bin_of(lab, sc))
            den = f_mem * pi + f_non * (1.0 - pi)
            out[n] = 0.5 if den == 0 else f_mem * pi / den
        return out


def prs_fit(member_scores, member_labels, nonmember_scores, nonmember_labels,
            bins_per_label=20, smoothing=1.0, prior_member=0.5) -> PrsModel:
    """Per-label uniform bins over the pooled score range of both sides."""
    if bins_per_label < 1:
        raise ValueError("bins_per_label must be positive")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    ms = np.asarray(member_scores, dtype=np.float64)
    ml = np.asarray(member_labels)
    ns = np.asarray(nonmember_scores, dtype=np.float64)
    nl = np.asarray(nonmember_labels)
    edges, mem_h, non_h = {}, {}, {}
    for lab in sorted(set(ml.tolist()) | set(nl.tolist())):
        a = ms[ml == lab]
        b = ns[nl == lab]
        if a.size == 0 or b.size == 0:
            raise FitError(f"label {lab} needs at least one member and one non-member score")
        lo = min(a.min(), b.min())
        hi = max(a.max(), b.max())
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        e = np.linspace(lo, hi, bins_per_label + 1)
        edges[lab] = e
        mem_h[lab] = np.histogram(a, bins=e)[0].astype(np.float64)
        non_h[lab] = np.histogram(b, bins=e)[0].astype(np.float64)
    return PrsModel(bins_per_label, float(smoothing), edges, mem_h, non_h, prior_member)


def model_scores(model, batch) -> np.ndarray:
    return modified_entropy_batch(model.predict_proba(batch), batch.labels)
