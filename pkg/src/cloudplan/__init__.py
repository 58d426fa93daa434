"""Multi-object rearrangement planning in segmented point-cloud space.

Plans are sequences of per-object rigid transforms found by multi-goal A*
over clouds, guided by demonstration-derived object/placement suggesters and
a model deviation estimator, and scored in a deterministic kinematic scene
simulator.
"""

from .errors import (
    CloudPlanError,
    ConfigError,
    CorruptRecord,
    DegenerateInput,
    EmptyCloud,
    EmptyDataset,
    InvalidSpec,
    InvalidVoxelSize,
    MismatchedObjects,
    MissingObject,
    NoApplicableMode,
    NoPlanFound,
    SchemaMismatch,
    ScriptFailure,
    UnfittedModel,
    UnknownObject,
)
from .geom import (
    Action,
    RansacParams,
    RigidTransform,
    SegmentedCloud,
    VoxelGrid,
    chamfer_distance,
    estimate_rigid_transform,
    object_center,
    transform_object,
    voxel_overlap,
    voxelize,
)
from .scene import (
    SceneParams,
    SceneSpec,
    SupportGraph,
    execute_action,
    generate_scene,
    support_graph,
)
from .tasks import TaskSpec, evaluate_task
from .suggest import (
    ObjectSuggesterModel,
    PlacementSuggesterModel,
    evaluate_suggesters,
    fit_object_suggester,
    fit_placement_suggester,
    suggest_objects,
    suggest_placements,
)
from .mde import MdeConfig, MdeModel, deviation_label, fit_mde, predict_deviation
from .search import (
    PlannerSuggesters,
    SearchNode,
    SearchParams,
    SearchResult,
    astar_plan,
    beam_search_plan,
    expand_node,
    random_rollout_plan,
    step_cost,
)
from .data import TransitionDataset, TransitionRecord, generate_demonstrations

__version__ = "0.1.0"
