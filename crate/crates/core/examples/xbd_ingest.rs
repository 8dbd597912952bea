//! Build a tiny xBD-format directory, ingest it at several noisy-pair rates
//! and show what ends up in the pretraining manifest.
//!
//! cargo run --release --example xbd_ingest

use anyhow::Result;
use noisypairs::xbd::{grade_of_subtype, ingest, undersample_counts, write_fixture, FixtureConfig, IngestConfig};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let tmp = tempfile::tempdir()?;
    let raw = tmp.path().join("raw");
    let n = write_fixture(&raw, &FixtureConfig::default())?;
    println!("{n} pre/post scenes under {}", raw.display());

    for subtype in [None, Some("no-damage"), Some("minor-damage"), Some("destroyed"), Some("un-classified")] {
        println!("  subtype {:<14} -> grade {:?}", subtype.unwrap_or("(none)"), grade_of_subtype(subtype));
    }

    for r in [0.0, 0.1, 0.5, 1.0] {
        let out = tmp.path().join(format!("r{r}"));
        let m = ingest(&raw, &out, &IngestConfig::new(r, 0))?;
        println!(
            "r_pairs {r:>4}: {:3} clean + {:3} noisy pairs (rate {:.3}), {} val, {} test tiles",
            m.clean_pairs.len(),
            m.noisy_pairs.len(),
            m.noisy_rate(),
            m.val_pairs.len(),
            m.test_pairs.len()
        );
    }

    // the same arithmetic at full xBD scale
    for r in [0.1, 0.7] {
        let (c, k) = undersample_counts(20446, 5224, r)?;
        println!("full scale, r_pairs {r}: keep {c} clean and {k} noisy");
    }
    Ok(())
}
