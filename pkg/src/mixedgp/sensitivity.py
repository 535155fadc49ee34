"""Rank-based Sobol index estimators and interaction-aware encoding plans.

First-order indices for continuous inputs use the rank-successor estimator
(1/n) sum_i y_i y_sigma(i) - ybar^2 over Var(y), where sigma maps each sample
to the one holding the next rank (wrapping around); categorical inputs use
the group-mean plug-in sum_l (N_l/n) ybar_l^2 - ybar^2.  Second-order mixed
indices restrict the rank permutation within each level.  A small decision
rule turns these estimates into a per-input encoding action: keep the plain
level encoding when the categorical main effect is large, switch to
interaction cells partitioned along the most interacting continuous input
when only an interaction is detected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MixedDataset
from .errors import ConfigError, DataError
from .gp import FactorSpec

DEFAULT_MAIN_THRESHOLD = 0.05
DEFAULT_INTERACTION_THRESHOLD = 0.05
DEFAULT_PARTITION_BINS = 4


def rank_successor(x) -> np.ndarray:
    """Permutation sending each index to the index of the next-ranked value.

    The sample with the largest value wraps around to the smallest.  Ties
    are ordered by original index (stable sort), so the result is always a
    bijection.
    """
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="stable")
    successor = np.empty(x.size, dtype=np.int64)
    successor[order] = np.roll(order, -1)
    return successor


def _variance(y: np.ndarray) -> float:
    var = float(y.var())
    if var <= 0:
        raise DataError("output is constant; sensitivity indices are undefined")
    return var


def _main_effect_continuous(x: np.ndarray, y: np.ndarray) -> float:
    sigma = rank_successor(x)
    return float(np.mean(y * y[sigma]) - y.mean() ** 2)


def _main_effect_categorical(u: np.ndarray, y: np.ndarray) -> float:
    counts = np.bincount(u)
    present = counts > 0
    means = np.bincount(u, weights=y)[present] / counts[present]
    n = y.size
    return float(np.sum(counts[present] / n * means ** 2) - y.mean() ** 2)


def sobol_first_continuous(x, y) -> float:
    """First-order Sobol index of a continuous input from the rank estimator.

    Estimates Var(E[Y|X]) / Var(Y); raw value, not clamped to [0, 1].
    Requires n >= 3 and non-constant y.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size or x.size < 3:
        raise DataError("need matched x/y with at least 3 samples")
    return float(_main_effect_continuous(x, y) / _variance(y))


def sobol_first_categorical(u, y) -> float:
    """First-order Sobol index of a categorical input via group means.

    Estimates Var(E[Y|U]) / Var(Y) = (sum_l (N_l/n) ybar_l^2 - ybar^2) / Var(Y).
    """
    u = np.asarray(u, dtype=np.int64).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if u.size != y.size or u.size < 1:
        raise DataError("need matched u/y samples")
    if np.any(u < 0):
        raise DataError("negative level code")
    return float(_main_effect_categorical(u, y) / _variance(y))


def sobol_second_mixed(x, u, y) -> float:
    """Second-order Sobol index of a (continuous, categorical) pair.

    Var(E[Y|X,U]) is estimated with rank-successor sums restricted within
    each level; the closed second-order index subtracts both main effects:
    S = (V_xu - V_x - V_u) / Var(Y).  Every level needs at least 3 samples.
    """
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=np.int64).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if not (x.size == u.size == n) or n < 3:
        raise DataError("need matched x/u/y with at least 3 samples")
    var = _variance(y)
    total = 0.0
    for level in np.unique(u):
        rows = np.flatnonzero(u == level)
        if rows.size < 3:
            raise DataError(f"level {level} has {rows.size} samples; need at least 3")
        yl = y[rows]
        total += float(np.sum(yl * yl[rank_successor(x[rows])]))
    v_joint = total / n - y.mean() ** 2
    v_x = _main_effect_continuous(x, y)
    v_u = _main_effect_categorical(u, y)
    return float((v_joint - v_x - v_u) / var)


@dataclass(frozen=True)
class SobolEstimates:
    """First- and second-order index estimates for one output column."""

    first_order: dict
    second_order: dict
    output_variance: float

    def __post_init__(self):
        if self.output_variance <= 0:
            raise DataError("output variance must be positive")


def sobol_report(ds: MixedDataset, output: int = 0, second_order: bool = False) -> SobolEstimates:
    """Estimate indices for every input of a dataset.

    First-order indices cover all continuous and categorical inputs;
    ``second_order`` adds every (categorical, continuous) pair.
    """
    if not 0 <= output < ds.n_outputs:
        raise DataError(f"output index {output} out of range")
    y = ds.y[:, output]
    first = {}
    for s, name in enumerate(ds.continuous_names):
        first[name] = sobol_first_continuous(ds.x[:, s], y)
    for t, name in enumerate(ds.categorical_names):
        first[name] = sobol_first_categorical(ds.u[:, t], y)
    second = {}
    if second_order:
        for t, cname in enumerate(ds.categorical_names):
            for s, xname in enumerate(ds.continuous_names):
                second[(cname, xname)] = sobol_second_mixed(ds.x[:, s], ds.u[:, t], y)
    return SobolEstimates(first, second, float(y.var()))


@dataclass(frozen=True)
class PlanAction:
    """Encoding action for one categorical input.

    ``kind`` is ``standard_encoding`` (large main effect), ``partitioned``
    (interaction detected; carries the partner continuous input and bin
    count), or ``none_significant``.
    """

    kind: str
    main_index: float
    x_index: int | None = None
    x_name: str | None = None
    n_bins: int | None = None
    interaction_index: float | None = None


@dataclass(frozen=True)
class InteractionPlan:
    """One action per categorical input plus the thresholds that produced it."""

    actions: dict
    main_threshold: float
    interaction_threshold: float
    estimates: SobolEstimates

    def to_gp_plan(self, metric: str = "w2", outputs=(0,)) -> dict:
        """Translate actions into per-input factor specs for model fitting.

        Partitioned actions become interaction-cell factors; everything else
        keeps the plain distributional encoding.
        """
        plan = {}
        for name, act in self.actions.items():
            if act.kind == "partitioned":
                plan[name] = FactorSpec("distributional", metric, tuple(outputs),
                                        partition=(act.x_index, act.n_bins))
            else:
                plan[name] = FactorSpec("distributional", metric, tuple(outputs))
        return plan


def build_interaction_plan(ds: MixedDataset, main_threshold: float = DEFAULT_MAIN_THRESHOLD,
                           interaction_threshold: float = DEFAULT_INTERACTION_THRESHOLD,
                           n_bins: int = DEFAULT_PARTITION_BINS,
                           output: int = 0) -> InteractionPlan:
    """Choose an encoding action per categorical input from Sobol estimates.

    A categorical input with first-order index >= ``main_threshold`` keeps
    the standard encoding.  Otherwise its second-order index with every
    continuous input is estimated; if any reaches
    ``interaction_threshold``, the input is partitioned along the most
    interacting continuous input with ``n_bins`` quantile bins.  Inputs with
    neither signal are flagged ``none_significant``.
    """
    for thr in (main_threshold, interaction_threshold):
        if not 0.0 < thr < 1.0:
            raise ConfigError(f"thresholds must lie in (0, 1), got {thr}")
    if n_bins < 2:
        raise ConfigError("n_bins must be >= 2")
    if not 0 <= output < ds.n_outputs:
        raise DataError(f"output index {output} out of range")
    y = ds.y[:, output]
    first = {name: sobol_first_continuous(ds.x[:, s], y)
             for s, name in enumerate(ds.continuous_names)}
    second = {}
    actions = {}
    for t, cname in enumerate(ds.categorical_names):
        s_u = sobol_first_categorical(ds.u[:, t], y)
        first[cname] = s_u
        if s_u >= main_threshold:
            actions[cname] = PlanAction("standard_encoding", s_u)
            continue
        pair_scores = []
        for s, xname in enumerate(ds.continuous_names):
            s2 = sobol_second_mixed(ds.x[:, s], ds.u[:, t], y)
            second[(cname, xname)] = s2
            pair_scores.append((s2, s, xname))
        significant = [p for p in pair_scores if p[0] >= interaction_threshold]
        if significant:
            s2, s, xname = max(significant, key=lambda p: p[0])
            actions[cname] = PlanAction("partitioned", s_u, s, xname, n_bins, s2)
        else:
            actions[cname] = PlanAction("none_significant", s_u)
    estimates = SobolEstimates(first, second, float(y.var()))
    return InteractionPlan(actions, main_threshold, interaction_threshold, estimates)
