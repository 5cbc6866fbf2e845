"""Next point-of-interest recommendation with a mobility graph transformer."""

from .config import RunConfig, load_config
from .data import (
    CheckIn,
    CorpusLabels,
    SplitCorpus,
    SynthConfig,
    Trajectory,
    Vocab,
    build_vocab,
    chronological_split,
    generate_synthetic,
    load_corpus,
    parse_checkins,
    prepare_corpus,
    reindex_split,
    save_corpus,
    segment_trajectories,
)
from .errors import ConfigError, DataError, MobgtError, NumericError
from .eval import MarkovModel, MetricsReport, evaluate, mc_predict, mc_train, metrics_for_example
from .geo import BinSpec, bin_index, fd_bin_count, haversine, make_bins
from .global_graphs import (
    GlobalGraph,
    build_category_graph,
    build_global_graphs,
    build_spatial_graph,
    build_temporal_graph,
)
from .local_graph import LocalMobilityGraph, expand_prefixes, featurize, trajectory_to_graph
from .model import Checkpoint, MobGT, predict_topk, tail_loss, total_loss, train_model

__version__ = "0.1.0"
