//! Voronoi texture segmentation: synthetic images with controllable noise.

mod compose;
mod dataset;
mod layout;
mod texture;

pub use compose::{
    check_sample, compose_image, inject_noise, replaced_cell_count, Composed, NoiseMode, VtsSample, Window,
    NOISE_CLASS,
};
pub use dataset::{
    generate_dataset, generate_irrelevant_noise_dataset, generate_sample, sample_id, verify_dataset,
    DatasetManifest, GeneratorConfig, SampleManifest, SplitTextures, TextureChoice, VerifyReport, VtsDataset,
    VtsRecord, DATASET_FILE, SAMPLE_MANIFEST_FILE,
};
pub use layout::{generate_layout, LayoutRecord, VoronoiLayout, MAX_LAYOUT_ATTEMPTS};
pub use texture::{
    procedural_texture, write_procedural_textures, Split, Texture, TextureBank, TextureClass, DEFAULT_SPLIT_RATIOS,
};
