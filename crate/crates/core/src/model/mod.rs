//! The ML Base and ML VSL interpolation networks and their training.

pub mod loss;
pub mod train;
pub mod unet;

pub use loss::{
    distance_weight, gaussian_kernel, smoothness_loss, weight_decay, GaussianForm, LAPLACIAN,
};
pub use train::{train_single_field, LossRecord, TrainConfig, TrainReport};
pub use unet::{build_unet, Downsampling, UNet, UNetConfig};
