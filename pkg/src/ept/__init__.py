"""Multi-scale deconvolution mixture-of-experts adapters over frozen linear weights."""
from .accounting import ParamBreakdown, count_params
from .adapter import (EptLayer, GatingDecision, adapter_forward, build_layer, merged_weight, scaling_factor,
                      trainable_parameters)
from .checkpoint import export_merged, load_checkpoint, load_merged, merged_forward, save_checkpoint, save_merged
from .config import Config, TaskSpec, load_config, reference_config, toy_config
from .errors import (CapacityError, ContractError, DegenerateInputError, EptError, IntegrityError, ManifestError,
                     NumericError, ParameterError, ShapeError, TrainingError)
from .experts import DeconvExpert, ExpertBank, init_bank, project_expert
from .numeric import GradTape, Tensor, backward, finite_diff_check, transposed_conv2d
from .router import RoutingStats, gate_scores, init_router, record_routing, routing_report, select_topk
from .subspace import MetaSubspace, full_seed, init_subspace, slice_seed
from .tasks import TaskEmbeddingTable, contrastive_loss, embedding_export, pool_features, similarity
from .train import evaluate, gradcheck_suite, init_state, run_ablation, train_loop

__version__ = "0.1.0"
