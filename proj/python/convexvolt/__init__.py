"""Input-convex surrogates for radial feeder voltages and convex reactive-power regulation."""

from ._core import (
    Activation,
    ConvexityReport,
    Dataset,
    GateMode,
    IcnnModel,
    MapeReport,
    PowerFlowSolution,
    RadialNetwork,
    RegulationProblem,
    RegulationResult,
    ScenarioConfig,
    TrainConfig,
    TrainReport,
    TrainStrategy,
    build_duplicated,
    check_convexity,
    collapse_duplicated,
    evaluate_mape,
    fit_normalization,
    forward,
    generate_dataset,
    initialize,
    is_convex_admissible,
    load_dataset,
    load_model,
    load_network,
    parse_network,
    save_dataset,
    save_model,
    solve,
    solve_distflow,
    split_dataset,
    train,
    verify_solution,
    voltage_magnitudes,
)

__all__ = [name for name in dir() if not name.startswith("_")]
