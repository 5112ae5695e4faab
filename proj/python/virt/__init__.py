"""Python bindings for the VIRT C++ core."""

from ._core import (
    CrossEncoder,
    DualEncoder,
    RunConfig,
    VirtError,
    alpha_grid,
    auc_roc,
    bench_latency,
    gen_keymatch,
    gen_overlap,
    select_layers,
    train_student,
    train_teacher,
    virt_loss,
)

__all__ = [
    "CrossEncoder",
    "DualEncoder",
    "RunConfig",
    "VirtError",
    "alpha_grid",
    "auc_roc",
    "bench_latency",
    "gen_keymatch",
    "gen_overlap",
    "select_layers",
    "train_student",
    "train_teacher",
    "virt_loss",
]
