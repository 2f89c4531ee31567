"""Structured filter sparsification of CNNs by ADMM."""
from .admm import (
    AdmmState,
    PathPoint,
    PathSchedule,
    accuracy,
    default_mu_grid,
    dual_update,
    epoch_schedule,
    fine_tune,
    inner_admm,
    performance_step,
    run_path,
    train,
)
from .data import Dataset, batch_iter, load_csv, load_idx, synth_generate
from .mask import BlockId, Mask
from .report import ReportRow, export_csv, read_csv, render_table, welch_t_test
from .sparsity import (
    BlockView,
    LayerGuardPolicy,
    PenaltyKind,
    mask_from_aux,
    partition_blocks,
    penalty_value,
    prox_l0_block,
    prox_l1_block,
    sparsity_stats,
    sparsity_step,
)
from .tensor_net import (
    LayerSpec,
    Network,
    NetworkSpec,
    apply_mask,
    forward,
    init_network,
    load_checkpoint,
    loss_and_grad,
    mac_counts,
    parse_arch,
    save_checkpoint,
    sgd_prox_step,
)

__version__ = "0.1.0"
