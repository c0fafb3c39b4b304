"""Simulation and detection of LiDAR point-removal attacks."""

from .attack import AttackMode, AttackSpec, CapabilityModel, min_attack_angle, synthesize
from .defense import azimuth_gap_detect, evaluate, fake_shadow_detect
from .echo import FilterChain, ReturnMode, chain_preset
from .sensor import Box3D, BoxClass, Scan, SensorConfig, sensor_preset

__version__ = "0.1.0"

__all__ = [
    "AttackMode", "AttackSpec", "Box3D", "BoxClass", "CapabilityModel", "FilterChain",
    "ReturnMode", "Scan", "SensorConfig", "azimuth_gap_detect", "chain_preset", "evaluate",
    "fake_shadow_detect", "min_attack_angle", "sensor_preset", "synthesize",
]
