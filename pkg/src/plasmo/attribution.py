"""Exact Shapley attributions over feature groups with an interventional value function."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import GroupingError, InvalidArgumentError

BACKGROUND_CAP = 256


@dataclass(frozen=True)
class FeatureGroups:
    names: tuple[str, ...]
    indices: tuple[tuple[int, ...], ...]

    def validate(self, n_features: int):
        if len(self.names) != len(self.indices) or not self.names:
            raise GroupingError("every group needs exactly one name")
        flat = [i for g in self.indices for i in g]
        if any(len(g) == 0 for g in self.indices):
            raise GroupingError("groups must be non-empty")
        if sorted(flat) != list(range(n_features)):
            raise GroupingError(
                f"groups {[list(g) for g in self.indices]} do not partition the {n_features} input features"
            )


DESIGN_GROUPS = FeatureGroups(("thickness", "wavelength", "material"), ((0,), (1,), (2, 3)))


@dataclass
class Explanation:
    base_value: float
    phi: np.ndarray  # one entry per group
    prediction: float
    instance_id: int = 0
    groups: FeatureGroups = DESIGN_GROUPS


def _as_vector_output(out, n):
    out = np.asarray(out, dtype=float)
    if out.ndim == 2 and out.shape[1] == 1:
        out = out[:, 0]
    if out.shape != (n,):
        raise InvalidArgumentError(f"model must return one value per row, got shape {out.shape}")
    return out


def coalition_values(f: Callable, instance, background, groups: FeatureGroups) -> dict:
    """v(S) for every coalition S (a frozenset of group positions), evaluated in one batch.

    v(S) is the mean model output over background rows whose features in S are
    replaced by the instance's.
    """
    instance = np.asarray(instance, dtype=float)
    background = np.atleast_2d(np.asarray(background, dtype=float))
    if background.shape[0] == 0:
        raise InvalidArgumentError("background set must be non-empty")
    if background.shape[1] != instance.size:
        raise InvalidArgumentError(f"background has {background.shape[1]} features, instance {instance.size}")
    groups.validate(instance.size)
    k = len(groups.names)
    coalitions = [frozenset(c) for r in range(k + 1) for c in itertools.combinations(range(k), r)]
    b = background.shape[0]
    batch = np.tile(background, (len(coalitions), 1))
    for n, coalition in enumerate(coalitions):
        cols = [i for g in coalition for i in groups.indices[g]]
        batch[n * b : (n + 1) * b, cols] = instance[cols]
    out = _as_vector_output(f(batch), batch.shape[0])
    return {c: float(out[n * b : (n + 1) * b].mean()) for n, c in enumerate(coalitions)}


def shapley_from_values(values: dict, k: int) -> np.ndarray:
    phi = np.zeros(k)
    for i in range(k):
        others = [g for g in range(k) if g != i]
        for r in range(k):
            weight = math.factorial(r) * math.factorial(k - r - 1) / math.factorial(k)
            for s in itertools.combinations(others, r):
                s = frozenset(s)
                phi[i] += weight * (values[s | {i}] - values[s])
    return phi


def shapley_exact(f: Callable, instance, background, groups: FeatureGroups = DESIGN_GROUPS, instance_id=0) -> Explanation:
    values = coalition_values(f, instance, background, groups)
    k = len(groups.names)
    return Explanation(
        base_value=values[frozenset()],
        phi=shapley_from_values(values, k),
        prediction=values[frozenset(range(k))],
        instance_id=instance_id,
        groups=groups,
    )


def background_sample(x, cap: int = BACKGROUND_CAP, seed: int = 0) -> np.ndarray:
    """The rows of ``x``, or a seeded subsample of ``cap`` rows when there are more."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] <= cap:
        return x
    idx = np.sort(np.random.default_rng(seed).choice(x.shape[0], cap, replace=False))
    return x[idx]


@dataclass
class GlobalImportance:
    groups: FeatureGroups
    mean_abs: np.ndarray
    ranking: tuple[str, ...]  # most important first
    explanations: list

    def table(self) -> np.ndarray:
        return np.array([e.phi for e in self.explanations])


def global_importance(f: Callable, instances, background, groups: FeatureGroups = DESIGN_GROUPS) -> GlobalImportance:
    instances = np.atleast_2d(np.asarray(instances, dtype=float))
    if instances.shape[0] < 10:
        raise InvalidArgumentError(f"global importance needs at least 10 instances, got {instances.shape[0]}")
    explanations = [shapley_exact(f, x, background, groups, i) for i, x in enumerate(instances)]
    mean_abs = np.mean(np.abs([e.phi for e in explanations]), axis=0)
    # stable sort keeps the declared group order on exact ties
    order = sorted(range(len(groups.names)), key=lambda g: -mean_abs[g])
    return GlobalImportance(groups, mean_abs, tuple(groups.names[g] for g in order), explanations)


def model_output(model, index: int = 0) -> Callable:
    """Wrap a Surrogate as a scaled-features -> single-output function."""

    def f(x):
        out = model.predict_features(x)
        return out[:, index] if out.ndim == 2 else out

    return f


def write_explanations_csv(explanations: Sequence[Explanation], path):
    groups = explanations[0].groups if explanations else DESIGN_GROUPS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "base_value"] + [f"phi_{n}" for n in groups.names] + ["prediction"])
        for e in explanations:
            w.writerow([e.instance_id, "%.9e" % e.base_value] + ["%.9e" % p for p in e.phi] + ["%.9e" % e.prediction])


def write_summary_csv(importance: GlobalImportance, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "group", "mean_abs_phi"])
        for rank, name in enumerate(importance.ranking, 1):
            g = importance.groups.names.index(name)
            w.writerow([rank, name, "%.9e" % importance.mean_abs[g]])


def read_summary_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(r["group"], float(r["mean_abs_phi"])) for r in rows]


def write_outputs(importance: GlobalImportance, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_explanations_csv(importance.explanations, out_dir / "explanations.csv")
    write_summary_csv(importance, out_dir / "summary.csv")
