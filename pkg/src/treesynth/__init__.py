"""Density-forecast combination with tree-structured combination weights."""

from .agents import (AdlModelSpec, ToyDgpConfig, build_adl_archive,
                     fit_adl_and_forecast, simulate_toy, standard_adl_panel)
from .errors import (ArchiveFormatError, ConfigError, DataShapeError,
                     IncompatibilityError, NumericalAbort, TreeSynthError,
                     TruncationError, ValidationError)
from .horseshoe import HorseshoeState, gibbs_update_horseshoe
from .modifiers import SPEC_NAMES, ModifierPanel, assemble_panel, crps_histogram
from .rng import RngHandle
from .scoring import (DmResult, FluctuationResult, PitResult, ScoreSeries,
                      build_score_series, dm_test, fluctuation_test,
                      modifier_inclusion, pits, probability_difference_map,
                      quantile_skewness, quantile_weighted_crps, sample_crps)
from .series import (AgentForecastArchive, HistogramForecast, McmcConfig,
                     TimeSeriesF, draw_from_histogram)
from .statespace import SvState, ffbs_intercept, ffbs_random_walk_vector, sv_update
from .storage import (ExperimentConfig, load_agent_archive, load_draw_archive,
                      load_experiment_config, merge_draw_files, save_agent_archive,
                      save_draw_archive)
from .synthesis import (DrawArchive, PredictiveDrawSet, SynthesisData, SynthesisSpec,
                        gibbs_sweep, incompleteness_r2, initial_state, merge_archives,
                        predict, prepare_synthesis_data, run_chain, run_synthesis,
                        shrinkage_r2)
from .trees import (TreeEnsemble, TreeNode, TreePriorConfig, evaluate_tree,
                    gibbs_update_ensemble, propose_tree_move, simulate_tree_from_prior,
                    split_candidates)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
