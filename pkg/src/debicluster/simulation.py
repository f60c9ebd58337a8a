"""Synthetic expression matrices with planted subtypes.

Scenario A plants mutually exclusive subtypes, B lets subtypes overlap in
samples, and C adds co-expression modules unrelated to the subtypes.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .binarization import stable_seed
from .dataio import ExpressionMatrix
from .evaluation import GroundTruth


@dataclass(frozen=True)
class SimulationSpec:
    n_features: int = 10000
    n_samples: int = 200
    subtype_sizes: tuple = (10, 20, 50, 100)
    n_biomarkers: int = 500
    scenario: str = "A"
    signal_mean: float = 4.0
    signal_std: float = 1.0
    coexpr_modules: int | None = None
    coexpr_size: int = 500
    coexpr_r: float = 0.5
    seed: int = 0

    @property
    def n_coexpr_modules(self):
        if self.coexpr_modules is not None:
            return self.coexpr_modules
        return 4 if self.scenario == "C" else 0

    def validate(self):
        if self.scenario not in ("A", "B", "C"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if any(s < 1 or s > self.n_samples for s in self.subtype_sizes):
            raise ValueError("subtype sizes must lie in [1, n_samples]")
        if self.scenario == "A" and sum(self.subtype_sizes) > self.n_samples:
            raise ValueError("scenario A needs sum(subtype_sizes) <= n_samples")
        used = len(self.subtype_sizes) * self.n_biomarkers + self.n_coexpr_modules * self.coexpr_size
        if used > self.n_features:
            raise ValueError(f"biomarkers and co-expression modules need {used} features, have {self.n_features}")
        if self.n_coexpr_modules and self.coexpr_size < 2:
            raise ValueError("co-expression modules need at least two features")
        if not 0 <= self.coexpr_r <= 1:
            raise ValueError("coexpr_r must lie in [0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["subtype_sizes"] = list(self.subtype_sizes)
        d["coexpr_modules"] = self.n_coexpr_modules
        return d


@dataclass
class Simulated:
    matrix: ExpressionMatrix
    truth: GroundTruth
    biomarkers: list = field(default_factory=list)
    coexpr: list = field(default_factory=list)


def generate(spec, seed=None):
    spec.validate()
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    f, n = spec.n_features, spec.n_samples
    x = rng.standard_normal((f, n))

    free_samples = np.arange(n)
    sample_sets = []
    for size in spec.subtype_sizes:
        if spec.scenario == "A":
            chosen = rng.choice(free_samples, size=size, replace=False)
            free_samples = np.setdiff1d(free_samples, chosen)
        else:
            chosen = rng.choice(n, size=size, replace=False)
        sample_sets.append(np.sort(chosen))

    perm = rng.permutation(f)
    nb = spec.n_biomarkers
    biomarkers = [np.sort(perm[i * nb : (i + 1) * nb]) for i in range(len(spec.subtype_sizes))]
    for feats, samples in zip(biomarkers, sample_sets):
        x[np.ix_(feats, samples)] = rng.normal(spec.signal_mean, spec.signal_std, size=(len(feats), len(samples)))

    offset = len(spec.subtype_sizes) * nb
    coexpr = []
    r = spec.coexpr_r
    for i in range(spec.n_coexpr_modules):
        mod = perm[offset + i * spec.coexpr_size : offset + (i + 1) * spec.coexpr_size]
        f0 = x[mod[0]].copy()
        x[mod[1:]] = f0[None, :] * r + x[mod[1:]] * np.sqrt(1 - r * r)
        coexpr.append(mod.copy())

    width = len(str(max(f, n) - 1))
    feature_ids = [f"g{i:0{width}d}" for i in range(f)]
    sample_ids = [f"s{j:0{width}d}" for j in range(n)]
    truth = GroundTruth([(f"subtype{i + 1}", s.tolist()) for i, s in enumerate(sample_sets)], n)
    return Simulated(ExpressionMatrix(feature_ids, sample_ids, x), truth, biomarkers, coexpr)


def suite_specs(base_seed=0, **overrides):
    specs = []
    for scenario in ("A", "B", "C"):
        for nb in (5, 50, 500):
            seed = stable_seed("suite", base_seed, scenario, nb) % 2**32
            specs.append(replace(SimulationSpec(scenario=scenario, n_biomarkers=nb, seed=seed), **overrides))
    return specs


def generate_suite(base_seed=0, **overrides):
    """The nine scenario x biomarker-count datasets as (spec, Simulated) pairs."""
    return [(spec, generate(spec)) for spec in suite_specs(base_seed, **overrides)]
