"""Desk-scale spiking-network training engine.

Modules: ``schedule`` (epoch-indexed learning-rate policies), ``events``
(event-camera data model, synthetic generator, container I/O), ``snn``
(LIF dynamics and surrogate-gradient training), ``trainer`` (epoch loop,
stability-based early stopping, comparison reports), ``carbon`` (training
carbon-footprint estimates), and ``cli`` (the experiment runner).
"""

from .carbon import EmissionReport, PowerProfile, carbon_emission, emission_reduction, training_power
from .errors import (
    ConfigError,
    DatasetFormatError,
    StateError,
    TrainingDiverged,
    ValidationError,
)
from .events import (
    Event,
    EventSample,
    Polarity,
    accumulate_frames,
    generate_synthetic_dataset,
    load_events,
    save_events,
    split_dataset,
)
from .schedule import (
    Cyclical,
    DecreasingCyclical,
    DecreasingStep,
    EqualCycles,
    ExponentialDecay,
    Geometric,
    GridEntry,
    OneCycle,
    PolicyConfig,
    ScheduleTrace,
    WarmRestarts,
    build_schedule,
    sota_baseline_policy,
    table1_grid,
)
from .snn import (
    Conv2d,
    Dense,
    LifParams,
    NetworkSpec,
    NetworkState,
    SurrogateConfig,
    backward_stbp,
    default_network,
    forward_batch,
    forward_pass,
    init_state,
    lif_step,
    surrogate_grad,
    update_weights,
)
from .trainer import (
    EpochRecord,
    RunLog,
    StabilityCriterion,
    TrainConfig,
    explore_grid,
    first_stable_epoch,
    run_training,
    speedup_report,
    stability_check,
)

__version__ = "0.1.0"
