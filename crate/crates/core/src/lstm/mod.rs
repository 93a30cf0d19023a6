//! From-scratch stacked LSTM used as the offline inverse-model controller.

mod io;
mod network;
mod spec;
mod train;

pub use io::{from_bytes, load_weights, save_weights, to_bytes, FORMAT_VERSION};
pub use network::{cell_forward, forward_batch, loss_and_gradient, Batch, DropoutMasks, LayerView, LstmWeights};
pub use spec::{LstmSpec, NormStats, TrainConfig};
pub use train::{
    build_batch, evaluate, evaluate_seq, norm_stats, predict_actuation, train, train_seq, window_labels,
    EpochLoss, SeqData, TrainReport,
};
