"""Distributed 3-D network localization from mixed local measurements.

Each node of a sensing graph carries one sensor class (relative position,
distance, bearing, angle, or ratio-of-distances). The package builds linear
displacement constraints from those measurements, analyzes rigidity and
localizability of the resulting framework, and recovers free-node positions
either in closed form or by distributed iteration.
"""

from .errors import (
    BoundUnavailableError,
    CoverageError,
    DegenerateGeometryError,
    DivergenceError,
    InsufficientMeasurementsError,
    NotLocalizableError,
    RealizabilityError,
)
from .network import (
    ANGLE,
    BEARING,
    DISTANCE,
    RATIO,
    RELPOS,
    SENSOR_CLASSES,
    MeasurementSet,
    Network,
    NodeSpec,
    NoiseSpec,
    Violation,
    inject_noise,
    load_scenario,
    network_from_json,
    network_to_json,
    random_rotation,
    relative_position,
    save_scenario,
    synthesize_all,
    synthesize_measurements,
    validate_assumptions,
)
from .constraints import (
    AngleConstraint,
    DisplacementConstraint,
    RatioMatrix,
    anchor_angle_constraints,
    build_displacement_constraint,
    build_network_constraints,
    build_ratio_matrix,
    constraint_localizes,
    constraints_from_json,
    constraints_to_json,
    displacement_from_distance_matrix,
    triangle_ratios,
)
from .rigidity import (
    InformationMatrix,
    NoiseMargin,
    build_rigidity_matrix,
    check_localizable,
    error_bound,
    information_matrix,
    is_infinitesimally_rigid,
    matrix_nullity,
    noise_margin_ok,
    trivial_motion_basis,
)
from .solver import (
    SequentialResult,
    SolverConfig,
    Trajectory,
    direct_solve,
    initial_estimates,
    solve_sequential,
    solve_simultaneous,
)
from .scenarios import (
    SENSOR_MIXES,
    fig4_network,
    generate_random,
    mixed_demo_network,
    mixed_demo_offsets,
)
from .simnet import MAX_LOG_ENTRIES, Message, SimResult, SimRun, run

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
