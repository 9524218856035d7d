"""Learned scalar cost over object arrangements.

A message-passing network over a scene's object graph scores each
arrangement with one number; training pushes observed arrangements
below sampled alternatives, and annealed gradient dynamics then finds
low-cost arrangements, optionally composed with differentiable
constraints such as collision avoidance.
"""

from .constraints import (
    COLLISION_MARGIN,
    COLLISION_WEIGHT,
    Footprint,
    collision_free,
    footprint,
    hinge_pair,
    rejection_sample,
    scene_collision_cost,
)
# ``energy`` (the scalar convenience wrapper) stays in its submodule:
# re-exporting it would shadow the ``scenefit.energy`` module attribute.
from .energy import (
    CheckpointError,
    EnergyConfig,
    EnergyModel,
    embed_semantics,
    energy_pose_gradient,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .sampler import (
    CostTerm,
    FixedMask,
    LangevinConfig,
    LangevinResult,
    SamplingError,
    compose,
    langevin_sample,
)
from .scene import (
    DatasetError,
    Pose,
    RelPose,
    Scene,
    SceneGraph,
    SceneObject,
    build_graph,
    load_dataset,
    relative_pose,
    save_dataset,
    split_scenes,
    wrap_angle,
)
from .training import (
    TrainConfig,
    TrainingError,
    TrainResult,
    contrastive_loss_and_param_grad,
    infonce_loss,
    infonce_loss_and_grads,
    train,
)

__version__ = "0.1.0"
