"""End-to-end biclustering run: standardize, binarize, cluster, assemble, verify."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

from .assembly import assemble_bicluster, de_verify, sort_biclusters
from .binarization import BinarizationParams, binarize_matrix
from .dataio import zscore_rows
from .modules import ClusteringParams, detect_modules

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UnpastParams:
    binarization: str = "gmm"
    p_threshold: float = 0.01
    min_n_samples: int = 5
    clustering: str = "louvain"
    directions: str = "separate"
    edge_threshold: float = 0.5
    resolution: float = 1.0
    tom_cutoffs: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    seed: int = 0
    de: bool = True
    de_lfc: float = 1.0
    de_pval: float = 0.05

    def binarization_params(self):
        return BinarizationParams(self.binarization, self.p_threshold, self.min_n_samples, self.seed)

    def clustering_params(self):
        return ClusteringParams(
            self.clustering, self.directions, self.edge_threshold, self.resolution, tuple(self.tom_cutoffs), self.seed
        )

    def to_dict(self):
        d = asdict(self)
        d["tom_cutoffs"] = list(self.tom_cutoffs)
        return d


@dataclass
class RunDetails:
    biclusters: list
    binarization: object
    modules: list


def run_unpast_detailed(m, params=UnpastParams(), cache_dir=None, threads=1):
    t0 = time.perf_counter()
    z = zscore_rows(m)
    binres = binarize_matrix(z, params.binarization_params(), cache_dir=cache_dir, threads=threads)
    # canonical node order so results do not depend on the row order of the input
    features = sorted(binres.retained, key=lambda f: m.feature_ids[f.feature_index])
    modules = detect_modules(features, params.clustering_params(), m.n_samples)
    log.info("%d modules from %d features", len(modules), len(features))
    biclusters = []
    for module in modules:
        b = assemble_bicluster(z, module, params.binarization, params.min_n_samples, params.seed)
        if b is not None and params.de:
            b = de_verify(m, b, params.de_lfc, params.de_pval)
        if b is not None:
            biclusters.append(b)
    biclusters = sort_biclusters(biclusters, m.feature_ids)
    log.info("%d biclusters in %.1f s", len(biclusters), time.perf_counter() - t0)
    return RunDetails(biclusters, binres, modules)


def run_unpast(m, params=UnpastParams(), cache_dir=None, threads=1):
    """Biclusters of an expression matrix, sorted by descending SNR."""
    return run_unpast_detailed(m, params, cache_dir, threads).biclusters
