"""Per-attention-head probing of essay-scoring activations."""

from ._headprobe import (
    DumpReader,
    HeadprobeError,
    __version__,
    binary_direction,
    cosine,
    denormalize_and_round,
    fit_mlp,
    fit_ridge,
    graded_direction,
    inspect,
    normalize_score,
    pca_2d,
    predict_mlp,
    predict_ridge,
    qwk,
    read_header,
    sweep,
    synth,
    write_dump,
)

__all__ = [
    "DumpReader",
    "HeadprobeError",
    "__version__",
    "binary_direction",
    "cosine",
    "denormalize_and_round",
    "fit_mlp",
    "fit_ridge",
    "graded_direction",
    "inspect",
    "normalize_score",
    "pca_2d",
    "predict_mlp",
    "predict_ridge",
    "qwk",
    "read_header",
    "sweep",
    "synth",
    "write_dump",
]
