"""White-box adversarial attacks with parameter-adaptive gradient supervision."""

from .attacks import AttackConfig, AttackTrace, run_attack
from .core import P3AConfig, P3ADsp, VanillaDsp, p3a_dsp
from .diffnet import LabeledDataset, LabeledSample, Model, ModelArch, load_model, save_model
from .numerics import GridShape

__all__ = [
    "AttackConfig", "AttackTrace", "run_attack",
    "P3AConfig", "P3ADsp", "VanillaDsp", "p3a_dsp",
    "LabeledDataset", "LabeledSample", "Model", "ModelArch", "load_model", "save_model",
    "GridShape",
]
