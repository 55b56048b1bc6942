"""Skill discovery where a language description of each state sets how far apart states are."""
from .config import RunConfig
from .estimators import LanguageSkillDiscovery
from .trainer import Checkpoint, HierCheckpoint, train, train_hier

__version__ = "0.1.0"

__all__ = ["Checkpoint", "HierCheckpoint", "LanguageSkillDiscovery", "RunConfig", "train", "train_hier", "__version__"]
