from .config import TrainConfig
from .core import (
    BatchResult,
    GradSet,
    NetState,
    OpCounter,
    backward_interval,
    block_seeds,
    classifier_seed_error,
    compute_loss,
    evaluate,
    forward_step,
    init_state,
    make_dropout_masks,
    predict,
    run_forward,
    train_batch,
)
from .optim import lr_schedule, sgd_momentum_step
from .oracle import oracle_bptt_grad
from .reference import bptt_reference_grads, bptt_reference_train_batch
