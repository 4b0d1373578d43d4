"""Pool-based active learning with a jointly trained classifier and input
density scorer, so that sample selection confidence is calibrated by the
training objective itself rather than by a post-hoc fix."""

from .calibration import (
    CalibrationReport,
    compute_ece,
    evaluate_model,
    negative_log_likelihood,
    reliability_table,
    temperature_scale,
)
from .data import (
    Dataset,
    PoolPartition,
    load_dataset,
    make_synthetic,
    normalize_features,
    parse_synthetic_spec,
    save_dataset,
    split_pools,
    unit_circle_means,
)
from .errors import (
    CalicoError,
    FormatError,
    NumericError,
    TrainingDiverged,
    ValidationError,
)
from .harness import (
    ExperimentConfig,
    compare,
    desk_preset,
    emit_report,
    load_config,
    paper_preset,
    run_experiment,
    run_single,
)
from .models import (
    ArchSpec,
    ModelState,
    build_model,
    confidence,
    grad_energy_input,
    input_energy,
    load_model,
    log_density_unnorm,
    logits,
    posterior,
    save_model,
)
from .orchestrator import (
    RemoteOracle,
    RoundRecord,
    RunDir,
    RunLog,
    SimulatedOracle,
    apply_oracle_update,
    run_al,
)
from .queries import (
    QuerySpec,
    equal_class_query,
    least_confidence_query,
    random_query,
    select_least_confident,
)
from .service import OracleQueue, serve_oracle
from .sgld import GaussianMixtureInit, SGLDConfig, fit_informative_init, run_chain, sgld_step
from .training import TrainConfig, joint_loss_and_grads, train_baseline, train_round

__version__ = "0.1.0"

__all__ = [
    "ArchSpec", "CalibrationReport", "CalicoError", "Dataset",
    "ExperimentConfig", "FormatError", "GaussianMixtureInit", "ModelState",
    "NumericError", "OracleQueue", "PoolPartition", "QuerySpec",
    "RemoteOracle", "RoundRecord", "RunDir", "RunLog", "SGLDConfig",
    "SimulatedOracle", "TrainConfig", "TrainingDiverged", "ValidationError",
    "apply_oracle_update", "build_model", "compare", "compute_ece",
    "confidence", "desk_preset", "emit_report", "equal_class_query",
    "evaluate_model", "fit_informative_init", "grad_energy_input",
    "input_energy", "joint_loss_and_grads", "least_confidence_query",
    "load_config", "load_dataset", "load_model", "log_density_unnorm",
    "logits", "make_synthetic", "negative_log_likelihood",
    "normalize_features", "paper_preset", "parse_synthetic_spec", "posterior",
    "random_query", "reliability_table", "run_al", "run_chain",
    "run_experiment", "run_single", "save_dataset", "save_model",
    "select_least_confident", "serve_oracle", "sgld_step", "split_pools",
    "temperature_scale", "train_baseline", "train_round",
    "unit_circle_means", "__version__",
]
