//! Multi-task pretraining: dense task heads on the backbone pyramid, the
//! four loss families summed over three dataset streams, AdamW with
//! layer-wise decay, and checkpoints.

mod checkpoint;
mod heads;
mod loss;
mod optim;
mod train;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_into, parse_checkpoint, save_checkpoint, LoadMode, LoadReport, PACK_MAGIC,
};
pub use heads::{
    head_key, head_outputs, init_stream_heads, is_head_key, CellGrid, HeadOutputs, Task, HEAD_PREFIX, STREAMS,
    STREAM_NAMES,
};
pub use loss::{aggregate_mtp, assign_cells, loss_instance, loss_rotated, loss_semantic, MtpLossReport, StreamLosses};
pub use optim::{decays, layer_index, layer_lr_scale, lr_at, optimizer_step, OptimConfig, OptimState};
pub use train::{
    init_model, sample_losses, trace_csv, train_mtp, StreamSource, StreamsConfig, TraceRow, TrainConfig, TrainOutcome,
    TRACE_HEADER,
};
