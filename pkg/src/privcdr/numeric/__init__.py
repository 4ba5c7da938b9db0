from .autodiff import (
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    active_tape,
    add,
    as_tensor,
    backward,
    bce_with_logits,
    concat_cols,
    cosine_rows,
    div,
    dot_rows,
    dropout_apply,
    exp,
    gather_rows,
    log,
    logsumexp_rows,
    matmul,
    mul,
    reduce_mean,
    reduce_sum,
    relu,
    row_sum,
    sigmoid,
    slice_cols,
    softmax_rows,
    spmm,
    sub,
)
from .checkpoint import CheckpointError, dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numeric_gradient, relative_error
from .optim import Adam, adam_step
from .layers import MLP, Dense, glorot, param_rng
