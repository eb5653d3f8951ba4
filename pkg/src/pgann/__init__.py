"""Proximity-graph approximate nearest neighbor toolkit."""

from .core import CandidatePool, Dataset, Neighbor, centroid, cos_angle_at, squared_l2
from .dataset_io import (CorruptIndexError, gen_synthetic, load_dataset,
                         load_index, load_vecs, save_index, save_vecs)
from .experiments import remote_rank_frequency, pruning_angle, sampling_coverage
from .graph import LayeredGraph, LayerGraph, ProximityGraph, complete_graph
from .hnsw import (FastHnswStats, HnswBuildStats, LayerAssignment,
                   assign_layers, build_fasthnsw, build_hnsw_original)
from .knng import KnngState, build_knng, knng_descent_iterate, knng_init_random
from .nsg import (CnaState, CnaStats, FastNsgStats, QualityEstimate,
                  build_fastnsg, build_nsg_original, cna_init,
                  estimate_quality, opt_kcna, opt_kcna_cached, sample_size)
from .oracle import exact_knn, ground_truth_table, mean_recall, recall_at_k
from .prune import PruneParams, RefineStats, alpha_prune, entry_point, refine, rng_prune
from .search import (SearchResult, kann_search, kann_search_instrumented,
                     layered_search, layered_search_counted, search_batch)

__version__ = "0.1.0"
