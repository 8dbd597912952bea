//! xBD-style bi-temporal imagery: polygon labels, tiling, noisiness,
//! site-stratified splits and undersampling to a noisy-pairs rate.

mod fixture;
mod ingest;
mod polygon;
mod split;
mod tile;

pub use fixture::{write_fixture, FixtureConfig};
pub use ingest::{
    discover_sources, ingest, load_source, site_of_stem, undersample_to_rate, IngestConfig, PretrainManifest,
    SourceFiles, TileRef, MANIFEST_FILE,
};
pub use polygon::{grade_of_subtype, parse_annotations, rasterize_labels, Annotation, Annotations};
pub use split::{split_train_val, undersample, undersample_counts, DEFAULT_TRAIN_RATIO};
pub use tile::{
    binarize_label, classify, tile, Noisiness, SourcePair, TilePair, DAMAGE_THRESHOLD, MAX_GRADE, SOURCE_SIZE,
    TILE_SIZE,
};
