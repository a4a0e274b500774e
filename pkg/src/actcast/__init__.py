"""actcast: dense action forecasting with per-frame granularity selection.

The pipeline: a recurrent forecaster rolls out future action segments with
per-class uncertainty at two label granularities; a trainable selector
decides per frame whether to emit the fine or the coarse prediction; a
beta-weighted accuracy stack scores the resulting mixed-granularity output.
"""

__version__ = "0.1.0"

from .taxonomy import Taxonomy, load_mapping, save_mapping
from .data import (
    GrammarSpec,
    Segment,
    VideoSequence,
    default_grammar,
    default_taxonomy,
    generate_corpus,
    load_annotations,
    make_splits,
    split_observation,
)
from .forecaster import (
    ForecastDistribution,
    ForecasterConfig,
    UncertaintyMode,
    encode_observation,
    predict_future,
    train_forecaster,
    train_uncertainty_models,
)
from .selector import (
    GranularityTrack,
    SelectorConfig,
    build_features,
    compose_output,
    derive_labels,
    oracle_selector,
    select,
    selector_loss,
    train_selector,
)
from .metrics import (
    ScoreReport,
    interpolate_to_length,
    moc_accuracy,
    mse_nll,
    nll,
    weighted_accuracy,
)

__all__ = [name for name in dir() if not name.startswith("_")]
