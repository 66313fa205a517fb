"""Hyperspectral scene classification and clutter detection with an
ensemble of feature-embedded locally linear embeddings."""

from hsille.datacube import (
    HsiCube,
    LabelMask,
    ReferenceSet,
    load_cube,
    load_label_mask,
    remove_bands,
    sample_reference,
    write_cube,
    write_label_mask,
)
from hsille.ensemble import (
    ClutterResult,
    EnsembleTally,
    TrialConfig,
    clutter_split,
    consensus,
    entropy,
    enumerate_trials,
    run_trial,
    tally,
)
from hsille.errors import DataError, HsiError, NumericalError, UsageError
from hsille.features import (
    FeatureImage,
    FeatureParams,
    SpectrumScope,
    assemble_features,
    box_filter,
    select_scope,
    spectral_gradient,
    spectral_moments,
)
from hsille.lle import (
    ManifoldCoords,
    SparseWeightMatrix,
    assemble_weight_matrix,
    embed_pipeline,
    reduce_dimension,
    solve_local_weights,
)
from hsille.metrics import AccuracyReport, LabelMap, accuracy_report, average_accuracy, nn_classify, overall_accuracy
from hsille.neighbors import NeighborList, cosine_similarity, euclidean_knn, windowed_knn

__version__ = "0.1.0"
