"""Periodic trajectory planning and optimization for persistent monitoring
of stochastic targets in an environment partitioned into constant-drift
regions."""

from .environment import (
    GEO_TOL,
    BoundarySegment,
    Halfspace,
    Partition,
    Region,
    voronoi_partition,
)
from .dynamics import (
    PathTrace,
    TransitPlan,
    integrate_path,
    min_transit_time,
    transit_plan,
)
from .estimation import (
    CovState,
    QualityField,
    Target,
    accumulate_cost,
    propagate,
    riccati_step,
)
from .rrbt import DistanceMatrix, RrbtTree, distance_matrix, grow_tree
from .sequencer import (
    CyclePlan,
    MonitorSpec,
    SwitchingSegment,
    VisitingSequence,
    build_switching_segments,
    plan_cycle,
    solve_tsp,
)
from .monitor import (
    MonitorProblem,
    MonitorSolution,
    SegmentSolver,
    sensitivity,
    simulate_monitoring,
    solve_monitor,
)
from .bilevel import (
    CycleSimulator,
    CycleState,
    OptimizerConfig,
    cycle_gradient,
    optimize,
    simulate_cycles,
)
from .scenario import Scenario, load_scenario

__version__ = "0.1.0"
