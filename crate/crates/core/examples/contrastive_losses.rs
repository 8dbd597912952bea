//! The three objectives on hand-made feature maps.

use anyhow::Result;
use noisypairs::losses::{
    cross_image_loss, info_nce, info_nce_grad, within_image_loss, DenseLabelGrid, FeatureMap, KeyQueue,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit(v: &[f32]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    // InfoNCE against a queue of random keys
    let queue = KeyQueue::random(255, 16, &mut rng);
    let q = unit(&[1.0; 16]);
    for (name, k_plus) in [("aligned", q.clone()), ("orthogonal", unit(&[[1.0, -1.0]; 8].concat()))] {
        let loss = info_nce(&q, &k_plus, queue.as_slice(), 0.2)?;
        println!("info_nce, {name:10} positive, 255 negatives: {loss:.4}");
    }
    let g = info_nce_grad(&q, &q, &q.repeat(7), 1.0);
    println!("all keys equal to q: {:.6} = ln 8 = {:.6}", g.loss, 8f64.ln());

    // 4×4 maps, two classes split left/right
    let d = 4;
    let labels = DenseLabelGrid::new(d, (0..d * d).map(|p| (p % d >= d / 2) as u8).collect())?;
    let features: Vec<f32> = (0..d * d)
        .flat_map(|p| if p % d >= d / 2 { [0.0, 1.0] } else { [1.0, 0.0] })
        .collect();
    let clean = FeatureMap::new(d, 2, features.clone())?;
    // keys with the class directions swapped
    let swapped: Vec<f32> = features.chunks(2).flat_map(|v| [v[1], v[0]]).collect();
    let mixed = FeatureMap::new(d, 2, swapped)?;
    for tau in [0.1, 0.5] {
        println!(
            "within_image tau {tau}: separated {:.4}, swapped {:.4}",
            within_image_loss(&clean, &clean, &labels, &labels, tau)?,
            within_image_loss(&clean, &mixed, &labels, &labels, tau)?
        );
    }

    // a third image with only class 1 adds positives for half the anchors
    let other = DenseLabelGrid::new(d, vec![1; d * d])?;
    let other_f = FeatureMap::new(d, 2, [0.0f32, 1.0].repeat(d * d))?;
    println!(
        "cross_image: {:.4} (within alone {:.4})",
        cross_image_loss(&clean, &clean, &other_f, &labels, &labels, &other, 0.5)?,
        within_image_loss(&clean, &clean, &labels, &labels, 0.5)?
    );
    Ok(())
}
