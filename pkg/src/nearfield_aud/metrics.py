"""Confusion counts and the balanced-accuracy complement ``1 - A``."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    tn: int
    fp: int
    k_true: int
    n_total: int

    @property
    def tpr(self) -> float:
        return self.tp / self.k_true

    @property
    def tnr(self) -> float:
        return self.tn / (self.n_total - self.k_true)


def confusion(true_set, detected_set, n_total: int) -> ConfusionCounts:
    true_set, detected_set = frozenset(true_set), frozenset(detected_set)
    if not true_set:
        raise ValueError("true active set is empty; the true positive rate is undefined")
    universe = frozenset(range(n_total))
    for name, s in (("true", true_set), ("detected", detected_set)):
        if not s <= universe:
            raise ValueError(f"{name} set has indices outside 0..{n_total - 1}: "
                             f"{sorted(s - universe)}")
    tp = len(true_set & detected_set)
    fp = len(detected_set - true_set)
    k = len(true_set)
    return ConfusionCounts(tp=tp, fn=k - tp, tn=n_total - k - fp, fp=fp, k_true=k, n_total=n_total)


def one_minus_balanced_accuracy(c: ConfusionCounts) -> float:
    """``1 - (TPR + TNR) / 2``, in ``[0, 1]``."""
    if c.k_true < 1 or c.n_total <= c.k_true:
        raise ValueError(f"need 1 <= K < N, got K={c.k_true}, N={c.n_total}")
    return 1.0 - 0.5 * (c.tpr + c.tnr)
