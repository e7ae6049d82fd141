"""Per-subgroup accuracy audits and PAC-Bayes subgroup bounds for aggregation-then-MLP GNNs."""

from ._accel import backend
from .aggregate import AggregatedFeatures, AggregationKind, AggregationSpec, aggregate, row_operator_checksum
from .graph import BundleError, CsrAdjacency, GraphBundle, load_bundle, save_bundle, to_csr
from .harness import DisparityReport, ModelKind, TrialPlan, run_biased_selection, run_bound_audit, run_disparity, run_noisy
from .model import MlpClassifier, TrainConfig, empirical_margin_loss, train
from .pac_bayes import BoundConfig, BoundReport, theorem3_concrete
from .subgroups import SplitKind, SubgroupPartition, build_near_sets
from .synth import gen_assumption_world, gen_homophilous, sample_labels

__version__ = "0.1.0"
