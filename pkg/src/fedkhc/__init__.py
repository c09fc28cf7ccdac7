"""One-shot federated clustering with automatic cluster-count selection."""

from .cardinality import GcsConfig, NeighborGraph, SncConfig, estimate_k, gcs_reduce
from .datagen import BUILTIN_DATASETS, MixtureSpec, builtin_specs, generate, load_builtin
from .federation import FederationConfig, RoundLog, RoundResult, run_round, split_by_cluster, split_iid
from .merger import ActiveCluster, MergeConfig, merge_to_k, relabel_clients, special_distance
from .metrics import accuracy, all_metrics, ari, dcv, f_measure, nmi
from .model import Partition, PointSet, SeededRng, SubclusterSummary, ValidationError, normalize
from .partitioner import LocalPartition, SnpConfig, grid_partition, snp_partition
from .surrogate import ClientUpload, SurrogateBlock, generate_surrogates, regularize_covariance, summarize

__version__ = "0.1.0"
