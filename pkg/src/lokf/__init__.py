"""Local knockoff filters: FDR-controlled discovery of subgroup-specific
variable associations, with a simulation laboratory and a CLI."""

from .data import (BlockMap, CloakMask, DataBundle, DatasetFormatError,
                   DimensionError, HypothesisId, PartitionSet, cloak_swap,
                   read_dataset_csv, subgroup_members, swap_subgroups,
                   write_dataset_csv)
from .filters import (DiscoverySet, LkfConfig, StatVector, alkf, assemble_w,
                      fixed_lkf, global_kf, knockoff_threshold, lkf_fixed,
                      naive_lkf, split_lkf, write_discoveries_csv)
from .knockoffs import (CondBernoulliModel, DiagnosticResult,
                        exchangeability_diagnostic, gen_bernoulli_knockoffs)
from .lasso import (CvResult, DesignMatrix, FitOptions, LassoFit,
                    interaction_design, lasso_cv, lasso_fit, standardize)
from .partition import (PartitionConfig, group_batches, learn_partition,
                        prescreen)
from .robust import (PcConfig, RobustDiscoverySet, binom_cdf, pc_order,
                     pc_pvalue, robust_alkf, seqstep_pvalues)
from .scores import (PriorWeights, ScoreConfig, ScoreTable, batch_scores,
                     block_aggregate, compute_score_table, local_score_pair,
                     prior_weights)
from .simlab import (MetricsRecord, ScenarioData, TruthModel, gen_blocks,
                     gen_hetero, gen_transfer, metric_fdp,
                     metric_homogeneity, metric_power, run_experiment,
                     shift_fdp, shift_power)

__version__ = "0.1.0"
