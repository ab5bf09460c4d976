//! On-disk datasets to validated manifests, eye groups, fold plans and resizing.

mod datasets;
mod folds;
mod groups;
mod masks;
mod resize;

pub use datasets::{
    count, lesion_counts, load_evaluation_set, load_ichallenge, EvaluationSet, IChallengeOptions, PublishedCounts,
    ARIA_COUNTS, ICHALLENGE_COUNTS, ICHALLENGE_LESION_COUNTS, STARE_COUNTS,
};
pub use folds::build_folds;
pub use groups::{assign_eye_groups, load_eye_groups};
pub use masks::{derive_lesion_labels, BinaryMask, LesionMaskSet, MaskPolarity};
pub use resize::{resize_channels, resize_plane, resize_to_width, scaled_height};
