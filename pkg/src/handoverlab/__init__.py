"""Desk-scale simulation and benchmark harness for dexterous handover.

The pipeline: synthesize grasp candidates on a mesh, filter them by
force-closure stability and collision, approach the moving object with a
receding-horizon policy, align to the selected goal pose at fixed velocity,
then score episodes and grasp sets with the benchmark metric suite.
"""

__version__ = "0.1.0"

from .geometry import (PointCloud, Pose3, Rotation3, interpolate_pose,
                       pose_distance)
from .mesh import (ObjectMesh, Sphere, box_mesh, icosphere_mesh, load_mesh,
                   penetration_depth, sample_surface, signed_distance,
                   signed_distances, validate_mesh)
from .hand import (HandConfig, HandDelta, HandState, apply_delta,
                   default_hand_config, forward_kinematics, hand_point_cloud,
                   load_hand_config, save_hand_config, validate_hand)
from .world import GiverTrajectory, Scene, advance_giver
from .icp import (IcpParams, IcpResult, best_rigid_transform, icp_align,
                  load_xyz, save_xyz, track_sequence)
from .grasping import (Contact, GraspCandidate, StabilityParams,
                       filter_candidates, filter_collision, hand_penetration,
                       sample_candidates, select_goal, stability_test,
                       track_goal)
from .policy import (ActionPlan, ObservationWindow, PolicyParams,
                     build_observation, goal_pursuit_policy,
                     velocity_matching_policy)
from .alignment import (AlignmentParams, AlignmentStep, alignment_distance,
                        alignment_step, plan_steps)
from .episode import (Episode, EpisodeConfig, FrameRecord, run_benchmark,
                      run_episode)
from .metrics import (ApproachMetrics, GraspMetrics, approach_metrics,
                      emit_report, grasp_metrics, parse_report_csv)
from .configio import (RunManifest, build_episode_config, build_suite,
                       check_config, config_hash, load_config,
                       read_episode_log, read_manifest, write_episode_log,
                       write_manifest)

__all__ = [name for name in dir() if not name.startswith("_")]
