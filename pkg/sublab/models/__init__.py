from sublab.models.transformer import (
    Encoded,
    ForwardOut,
    ModelParams,
    apply_model,
    clone_student_from_teacher,
    encode,
    forward,
    init_params,
)

__all__ = [
    "Encoded",
    "ForwardOut",
    "ModelParams",
    "apply_model",
    "clone_student_from_teacher",
    "encode",
    "forward",
    "init_params",
]
