//! Positive pairs for pretraining: clean, noisy and mere-exposure pairs with
//! independent augmentation of each view.

mod augment;
mod sampler;

pub use augment::{augment, gaussian_blur, AugmentConfig, GeometricTransform};
pub use sampler::{
    append_pair_log, images_to_tensor, plan_vts, plan_xbd, realize, sample_pair_vts, sample_pair_xbd,
    AugmentedPair, PairBatch, PairKind, PairLoader, PairPlan, PairRule, PairSource, PairingMode, ViewSource,
    PIXEL_MEAN, PIXEL_STD,
};
