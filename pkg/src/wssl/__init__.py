"""Workspace binary maps for serial manipulators and subspace-learned predictors of them."""

from .kinematics import (DHRow, IKSettings, Manipulator, Pose, differential_motion, dh_transform,
                         forward_kinematics, inverse_kinematics, jacobian, rpy_to_rotation)
from .workspace import (BitTensor, Mode, Scope, build_scope, discretize_workspace, flatten,
                        node_pose, slice_output, unflatten)
from .datagen import (Dataset, DistributionSpec, SubspaceDescriptor, generate_dataset,
                      load_dataset, sample_manipulator, save_dataset, spherical_wrist_spec,
                      split_dataset)
from .slnet import (Loss, Metrics, NetArchitecture, Optimizer, ParameterSet, SubspaceBank,
                    TrainConfig, bank_predict, evaluate, forward, init_parameters, threshold_filter,
                    train)

__version__ = "0.1.0"
