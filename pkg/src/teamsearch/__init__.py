"""Heterogeneous multi-agent coverage and target search on occupancy grids."""
from .world import AgentSpec, EntropyMap, Pose, StaticMap
from .orchestrator import MissionConfig, MissionMetrics, run_mission

__all__ = ["AgentSpec", "EntropyMap", "Pose", "StaticMap", "MissionConfig", "MissionMetrics", "run_mission"]
__version__ = "0.1.0"
