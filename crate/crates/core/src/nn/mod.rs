//! From-scratch U-Net regression engine: layers with analytic gradients,
//! weighted MSE, Adam, the training loop, gradient checking and the UNW
//! weight file format.

mod adam;
mod gradcheck;
mod io;
mod layers;
mod loss;
mod sample;
mod tensor;
mod train;
mod unet;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradient_check, relative_error, GradCheckOptions, GradCheckReport};
pub use io::{read_unw, unw_read, unw_write, write_history_csv, write_unw, UNW_MAGIC};
pub use layers::{
    concat_channels, maxpool2, maxpool2_backward, relu_backward_in_place, relu_in_place, sigmoid, split_channels,
    upsample2, upsample2_backward, Conv2d, ConvGrads,
};
pub use loss::{mae_metric, weight_sum, weighted_mse};
pub use sample::{image_tensor, TrainSample, INPUT_SCALE};
pub use tensor::{Scalar, Tensor};
pub use train::{
    batch_gradients, evaluate, train, train_with_callback, EpochRecord, EvalSums, TrainConfig, TrainOutcome,
};
pub use unet::{BackwardFault, ForwardCache, Gradients, UNet, UNetConfig};
