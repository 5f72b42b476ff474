from .base import HiddenCache, Model
from .masks import build_attention_masks
from .tabular import TabularModel, tabular_draft_row, tabular_target_row
from .hybrid import HybridConfig, HybridModel
from .checkpoint import load_model, save_model

__all__ = [
    "HiddenCache",
    "Model",
    "build_attention_masks",
    "TabularModel",
    "tabular_draft_row",
    "tabular_target_row",
    "HybridConfig",
    "HybridModel",
    "load_model",
    "save_model",
]
