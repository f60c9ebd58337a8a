"""Differential-expression biclustering of feature x sample matrices."""
from .assembly import Bicluster, assemble_bicluster, de_verify
from .binarization import (
    BinarizationParams,
    BinarizedFeature,
    NullSnrModel,
    binarize_all,
    binarize_feature,
    build_null_model,
    empirical_pvalue,
    snr,
)
from .dataio import ExpressionMatrix, read_biclusters, read_matrix, write_biclusters, write_matrix, zscore_rows
from .evaluation import (
    GroundTruth,
    PerformanceReport,
    adjust,
    ari_bipartition,
    best_match_performance,
    chi2_2x2,
    fisher_exact,
    fsp,
)
from .modules import ClusteringParams, FeatureModule, feature_similarity, louvain_modules, tom_modules
from .pipeline import UnpastParams, run_unpast
from .simulation import SimulationSpec, generate, generate_suite

__version__ = "0.1.0"
