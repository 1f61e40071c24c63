//! Minimal differentiable tensor core: the op set needed by the choice
//! blocks and task heads, parameter storage and momentum SGD.
//!
//! Every primitive is a pair of free functions, `op` and `op_backward`.
//! Callers keep whatever the backward pass needs; there is no tape.

pub mod gradcheck;
mod loss;
mod ops;
mod params;
mod sgd;
mod tensor;

pub use loss::{sigmoid, sigmoid_backward, smooth_l1, softmax_cross_entropy};
pub use ops::{
    batch_norm_eval, batch_norm_train, batch_norm_train_backward, channel_concat,
    channel_concat_backward, channel_shuffle, channel_shuffle_backward, channel_split,
    channel_stats, conv2d, conv2d_backward, fully_connected, fully_connected_backward,
    global_avg_pool, global_avg_pool_backward, max_pool, max_pool_backward, relu, relu_backward,
    BnCache, BnStats, ChannelStats, ConvSpec, BN_EPSILON, BN_MOMENTUM,
};
pub use params::{Gradients, ParamEntry, ParamId, ParamStore};
pub use sgd::{LrSchedule, Sgd, SgdConfig};
pub use tensor::{Scalar, Shape, Tensor};
