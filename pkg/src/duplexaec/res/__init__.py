from .dfsmn import (DfsmnConfig, DfsmnModel, MaskSet, ResState, count_params, frame_features,
                    init_model, param_shapes, res_forward, res_forward_features,
                    res_forward_sequence, stack_masks)
from .modelfile import (BadMagicError, ModelFileError, NonFiniteWeightsError, ShapeMismatchError,
                        TruncatedModelError, VersionMismatchError, load_model, save_model)

__all__ = [
    "DfsmnConfig", "DfsmnModel", "MaskSet", "ResState", "count_params", "frame_features",
    "init_model", "param_shapes", "res_forward", "res_forward_features", "res_forward_sequence",
    "stack_masks", "BadMagicError", "ModelFileError", "NonFiniteWeightsError",
    "ShapeMismatchError", "TruncatedModelError", "VersionMismatchError", "load_model", "save_model",
]
