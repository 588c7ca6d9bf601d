"""Headless real-time soft/rigid body simulation engine."""
from .mesh import SurfaceMesh, TetMesh, boundary_surface, load_surface_mesh, load_tet_mesh
from .transforms import Pose
from .dynamics import MechanicalParams, RigidBody, SoftBody, SolverConfig
from .collision import CollisionParams, attach_collision_model
from .attachment import AttachmentConfig, bind_points, create_attachment
from .topology import DynamicTopologyState, rupture_step
from .visual import VisualBody, build_subdivision, refresh_positions
from .articulation import (ArticulatedInstrument, Articulation, Endoscope, JointConfiguration, MetricTracker,
                           make_articulated_instrument)
from .runtime import EventDispatcher, Scene, SchedulerConfig, VirtualHapticDevice, run_deterministic, run_realtime
from .scene import build_scene, load_scene_config

__version__ = "0.1.0"

__all__ = [
    "SurfaceMesh", "TetMesh", "boundary_surface", "load_surface_mesh", "load_tet_mesh", "Pose",
    "MechanicalParams", "RigidBody", "SoftBody", "SolverConfig", "CollisionParams", "attach_collision_model",
    "AttachmentConfig", "bind_points", "create_attachment", "DynamicTopologyState", "rupture_step",
    "VisualBody", "build_subdivision", "refresh_positions", "ArticulatedInstrument", "Articulation", "Endoscope",
    "JointConfiguration", "MetricTracker", "make_articulated_instrument", "EventDispatcher", "Scene",
    "SchedulerConfig", "VirtualHapticDevice", "run_deterministic", "run_realtime", "build_scene",
    "load_scene_config",
]
