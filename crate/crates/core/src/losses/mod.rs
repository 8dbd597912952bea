//! InfoNCE with a momentum key queue, and the within-image and cross-image
//! dense losses.

mod dense;
mod info_nce;
mod moco;

pub use dense::{
    cross_image_grad, cross_image_loss, dense_batch, dense_contrastive, downsample_label, extract_feature_map,
    grads_to_tensor, within_image_grad, within_image_loss, DenseGrad, DenseKind, DenseLabelGrid, FeatureMap, KeySet,
    FEATURE_NORM_TOLERANCE,
};
pub use info_nce::{info_nce, info_nce_batch, info_nce_grad, log_sum_exp, InfoNceGrad, NORM_TOLERANCE};
pub use moco::{momentum_update, KeyQueue, MocoState};
