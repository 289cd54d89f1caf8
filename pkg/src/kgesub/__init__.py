"""Knowledge-graph embedding training with pluggable subsampling.

Subpackages:
    data         triples, vocabularies, query frequency counts
    models       score functions, gradients, parameter checkpoints
    subsampling  count-based / model-based / mixed weight tables
    training     negative sampling, weighted loss, SGD/Adam loop
    evaluation   filtered link-prediction ranking and metrics
    submodel     sub-model pre-training, scoring, and grid selection
    cli          command-line pipeline
"""

from .data import (Dataset, Direction, FrequencyTable, QueryKey, Triple,
                   Vocab, count_queries, load_dataset, load_triples,
                   query_frequency, singleton_query_stats, triple_frequency)
from .evaluation import (AggregateReport, EvalReport, aggregate_runs,
                         build_filter_index, evaluate, filtered_rank)
from .models import (ModelKind, ModelParams, init_params, load_params,
                     save_params, score, score_batch, score_gradient,
                     score_triples)
from .submodel import (Selection, mbs_frequencies_all_candidates,
                       pretrain_submodel, score_training_triples,
                       select_submodel)
from .subsampling import (ALPHA_GRID, LAMBDA_GRID, SubModelScores,
                          SubsamplingMethod, WeightTable, build_cbs_weights,
                          build_mbs_weights, mbs_frequencies, mix_weights,
                          softmax_over_train, uniform_weights)
from .training import (TrainConfig, TrainExample, batch_loss, load_checkpoint,
                       ns_loss, sample_negatives, save_checkpoint, train)

__version__ = "0.1.0"
