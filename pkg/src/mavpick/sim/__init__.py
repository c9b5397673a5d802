"""Closed-loop simulation harness."""
from .bus import BroadcastBus, broadcast_deliver
from .runner import Simulation, detection_map, fusion_eval, run
from .scenario import BUILTINS, ConfigInvalid, ScenarioConfig, load, validate
from .world import DropZone, ObjectStatus, World, WorldObject, move_objects, reflect

__all__ = ["BUILTINS", "BroadcastBus", "ConfigInvalid", "DropZone", "ObjectStatus",
           "ScenarioConfig", "Simulation", "World", "WorldObject", "broadcast_deliver",
           "detection_map", "fusion_eval", "load", "move_objects", "reflect", "run", "validate"]
