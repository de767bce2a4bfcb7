"""Python front end for the fedil simulator core."""

from ._fedil import (
    Activation,
    Config,
    ConfigError,
    FedilError,
    ModelArch,
    PreconditionError,
    Result,
    TrainingError,
    aggregate,
    banach_demo,
    contraction_verdict,
    cosine_gate,
    credibility_replay,
    forward,
    init_params,
    load_checkpoint,
    run_experiment,
    save_checkpoint,
    select_clients,
)

__all__ = [name for name in dir() if not name.startswith("_")]
