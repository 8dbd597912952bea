//! The same seed rendered twice: once with the noise texture as a third
//! class, once with replaced cells keeping their original class. Images are
//! identical; only the noisy labels differ.

use anyhow::{ensure, Result};
use noisypairs::vts::{
    generate_dataset, generate_irrelevant_noise_dataset, write_procedural_textures, GeneratorConfig, Split, VtsDataset,
    NOISE_CLASS,
};

fn main() -> Result<()> {
    let tmp = tempfile::tempdir()?;
    let textures = tmp.path().join("textures");
    write_procedural_textures(&textures, 6, 96, 1)?;
    let mut config = GeneratorConfig::desk(&textures, 0.5, 7);
    (config.n_train, config.n_val, config.n_test) = (12, 4, 4);

    generate_dataset(&config, &tmp.path().join("relevant"))?;
    generate_irrelevant_noise_dataset(&config, &tmp.path().join("irrelevant"))?;
    let relevant = VtsDataset::load(&tmp.path().join("relevant"))?;
    let irrelevant = VtsDataset::load(&tmp.path().join("irrelevant"))?;

    for (a, b) in relevant.split(Split::Train).iter().zip(irrelevant.split(Split::Train)) {
        ensure!(a.noisy_image == b.noisy_image, "images should not depend on the noise mode");
        let noise_px = a.noisy_label.data().iter().filter(|&&v| v == NOISE_CLASS).count();
        let kept = b.noisy_label.data() == b.clean_label.data();
        println!(
            "{}: {:2} replaced cells, {:4} noise-class pixels when relevant, irrelevant label == clean label: {kept}",
            a.manifest.id,
            a.manifest.replaced_cells.len(),
            noise_px
        );
    }
    Ok(())
}
