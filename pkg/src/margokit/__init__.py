"""margokit: domain generalization by marginal transfer learning.

Learns a decision function on the extended input (empirical marginal
distribution, feature vector) via kernel mean embeddings and regularized
risk minimization, with exact (dual QP) and approximate (random Fourier
features, Nystrom) training paths and a pooling baseline.
"""

from .bags import Bag, BagCollection, bags_from_arrays
from .data import (
    EllipseTaskParams,
    gen_collection,
    gen_ellipse_task,
    read_bags,
    split_collection,
    write_bags,
)
from .errors import (
    DataError,
    MargokitError,
    ModelCorruptError,
    ModelSchemaError,
    ModelVersionError,
    NumericalError,
    ParseError,
    UsageError,
)
from .features import (
    ApproxErrorReport,
    NystromMap,
    ProductRffMap,
    RffMap,
    approx_error_stats,
    embed_bag_rff,
    fit_nystrom,
    product_feature,
    rff_transform,
    sample_product_rff,
    sample_rff,
    theorem_bound,
)
from .kernels import (
    EmbeddingCache,
    KernelSpec,
    base_kernel,
    base_kernel_matrix,
    distribution_kernel,
    embedding_inner,
    gram_matrix,
    product_kernel,
)
from .learner import EvalReport, Model, evaluate, predict_bag, train
from .model_io import load_model, save_model
from .modelsel import GridAxis, GridSpec, cross_validate, recenter_grid, run_model_selection
from .solver import (
    DualSolution,
    LinearSolution,
    loss_eval,
    predict_dual,
    solve_dual_svm,
    solve_linear,
)

__version__ = "0.1.0"


def __getattr__(name):
    # deferred: the estimator layer pulls in scikit-learn, which the CLI never needs
    if name in ("MarginalTransferClassifier", "MarginalTransferRegressor"):
        from . import estimator

        return getattr(estimator, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

__all__ = [
    "Bag", "BagCollection", "bags_from_arrays",
    "EllipseTaskParams", "gen_collection", "gen_ellipse_task",
    "read_bags", "write_bags", "split_collection",
    "MargokitError", "UsageError", "DataError", "ParseError", "NumericalError",
    "ModelCorruptError", "ModelSchemaError", "ModelVersionError",
    "MarginalTransferClassifier", "MarginalTransferRegressor",
    "RffMap", "ProductRffMap", "NystromMap", "ApproxErrorReport",
    "sample_rff", "rff_transform", "embed_bag_rff", "sample_product_rff",
    "product_feature", "fit_nystrom", "approx_error_stats", "theorem_bound",
    "KernelSpec", "EmbeddingCache", "base_kernel", "base_kernel_matrix",
    "embedding_inner", "distribution_kernel", "product_kernel", "gram_matrix",
    "Model", "EvalReport", "train", "predict_bag", "evaluate",
    "save_model", "load_model",
    "GridAxis", "GridSpec", "cross_validate", "recenter_grid", "run_model_selection",
    "DualSolution", "LinearSolution", "solve_dual_svm", "predict_dual",
    "solve_linear", "loss_eval",
    "__version__",
]
