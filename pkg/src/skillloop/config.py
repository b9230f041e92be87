"""Tunable constants, grouped per subsystem.

All values are plain dataclass fields so experiment scripts can override them
without touching module code.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class SimConfig:
    """Simulator thresholds."""

    # A grasp engages only if the gripper sits within this distance (m) of the
    # object's grasp point.  Chosen so scripted nudges of 0.02-0.05 m are
    # observable.
    grasp_tolerance: float = 0.015
    # An articulated object counts as open/closed at these open fractions.
    open_success_fraction: float = 0.6
    close_success_fraction: float = 0.2
    # Canonical serialization rounds floats to this many decimals.
    serial_decimals: int = 6


@dataclass(frozen=True)
class GroundingConfig:
    """Vague-distance grounding coefficients (fractions of object extent)."""

    little_bit_factor: float = 0.25
    tiny_bit_factor: float = 0.10


@dataclass(frozen=True)
class RetrievalConfig:
    """Knowledge-retrieval parameters."""

    feature_dim: int = 16
    # Minimum cosine similarity for a visual match; below this the retriever
    # behaves as if the knowledge base were empty.
    visual_threshold: float = 0.8


@dataclass(frozen=True)
class ComposerConfig:
    """Defaults used when no distilled skill parameters are available."""

    default_pull_fraction: float = 0.7  # of the object's travel_max
    lift_height: float = 0.05


@dataclass(frozen=True)
class CapConfig:
    """Behavior of the corrections-as-new-instructions baseline."""

    # Fixed nudge (m) used when a movement correction carries no usable
    # object grounding.
    default_step: float = 0.01


@dataclass(frozen=True)
class EngineConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    grounding: GroundingConfig = field(default_factory=GroundingConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    composer: ComposerConfig = field(default_factory=ComposerConfig)
    cap: CapConfig = field(default_factory=CapConfig)


DEFAULT_CONFIG = EngineConfig()
