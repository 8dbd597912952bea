use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on layout redraws when a draw produces an empty cell.
pub const MAX_LAYOUT_ATTEMPTS: usize = 64;

/// A Voronoi partition of a square image into cells, each assigned to one of
/// two downstream classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoronoiLayout {
    image_size: usize,
    seeds: Vec<[u32; 2]>,
    cell_of: Vec<u16>,
    class_of_cell: Vec<u8>,
}

impl VoronoiLayout {
    /// Builds a layout from explicit seeds (`[x, y]` pixel coordinates) and a
    /// class per cell. Pixels go to the nearest seed under Euclidean distance,
    /// ties to the lowest cell index.
    pub fn from_seeds(image_size: usize, seeds: Vec<[u32; 2]>, class_of_cell: Vec<u8>) -> Result<Self> {
        if seeds.len() != class_of_cell.len() {
            return Err(Error::InvalidArgument(format!(
                "{} seeds but {} class assignments",
                seeds.len(),
                class_of_cell.len()
            )));
        }
        if seeds.is_empty() || seeds.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("{} cells", seeds.len())));
        }
        if let Some(s) = seeds
            .iter()
            .find(|s| s[0] as usize >= image_size || s[1] as usize >= image_size)
        {
            return Err(Error::InvalidArgument(format!(
                "seed {s:?} outside a {image_size}x{image_size} image"
            )));
        }
        let mut cell_of = vec![0u16; image_size * image_size];
        for y in 0..image_size {
            for x in 0..image_size {
                let mut best = u64::MAX;
                let mut best_cell = 0u16;
                for (i, s) in seeds.iter().enumerate() {
                    let dx = x as i64 - s[0] as i64;
                    let dy = y as i64 - s[1] as i64;
                    let d = (dx * dx + dy * dy) as u64;
                    if d < best {
                        best = d;
                        best_cell = i as u16;
                    }
                }
                cell_of[y * image_size + x] = best_cell;
            }
        }
        Ok(VoronoiLayout {
            image_size,
            seeds,
            cell_of,
            class_of_cell,
        })
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn n_cells(&self) -> usize {
        self.seeds.len()
    }

    pub fn seeds(&self) -> &[[u32; 2]] {
        &self.seeds
    }

    pub fn cell_of(&self) -> &[u16] {
        &self.cell_of
    }

    pub fn cell_at(&self, x: usize, y: usize) -> u16 {
        self.cell_of[y * self.image_size + x]
    }

    pub fn class_of_cell(&self) -> &[u8] {
        &self.class_of_cell
    }

    pub fn class_at(&self, x: usize, y: usize) -> u8 {
        self.class_of_cell[self.cell_at(x, y) as usize]
    }

    pub fn cell_pixel_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_cells()];
        for &c in &self.cell_of {
            counts[c as usize] += 1;
        }
        counts
    }

    /// Number of cells assigned to each class `0..2`.
    pub fn class_cell_counts(&self) -> [usize; 2] {
        let mut counts = [0usize; 2];
        for &c in &self.class_of_cell {
            counts[c.min(1) as usize] += 1;
        }
        counts
    }

    pub fn is_partition(&self) -> bool {
        let counts = self.cell_pixel_counts();
        counts.iter().sum::<usize>() == self.image_size * self.image_size
            && counts.iter().all(|&c| c >= 1)
    }
}

/// Draws a layout: seeds uniform over the pixel grid (duplicates rejected),
/// nearest-seed assignment, and a uniformly random balanced class split.
/// Deterministic in `rng_seed`.
pub fn generate_layout(image_size: usize, n_cells: usize, rng_seed: u64) -> Result<VoronoiLayout> {
    if n_cells < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 cells, got {n_cells}"
        )));
    }
    if image_size < n_cells {
        return Err(Error::InvalidArgument(format!(
            "a {image_size}x{image_size} image cannot hold {n_cells} cells"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let mut seeds: Vec<[u32; 2]> = Vec::with_capacity(n_cells);
        let mut guard = 0;
        while seeds.len() < n_cells && guard < 1000 * n_cells {
            guard += 1;
            let s = [
                rng.random_range(0..image_size as u32),
                rng.random_range(0..image_size as u32),
            ];
            if !seeds.contains(&s) {
                seeds.push(s);
            }
        }
        if seeds.len() < n_cells {
            continue;
        }
        let mut classes: Vec<u8> = (0..n_cells).map(|i| u8::from(i >= n_cells / 2)).collect();
        classes.shuffle(&mut rng);
        let layout = VoronoiLayout::from_seeds(image_size, seeds, classes)?;
        if layout.is_partition() {
            return Ok(layout);
        }
    }
    Err(Error::LayoutRetriesExhausted(MAX_LAYOUT_ATTEMPTS))
}

/// Serializable description sufficient to rebuild a layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutRecord {
    pub image_size: usize,
    pub seeds: Vec<[u32; 2]>,
    pub class_of_cell: Vec<u8>,
}

impl From<&VoronoiLayout> for LayoutRecord {
    fn from(l: &VoronoiLayout) -> Self {
        LayoutRecord {
            image_size: l.image_size,
            seeds: l.seeds.clone(),
            class_of_cell: l.class_of_cell.clone(),
        }
    }
}

impl LayoutRecord {
    pub fn rebuild(&self) -> Result<VoronoiLayout> {
        VoronoiLayout::from_seeds(self.image_size, self.seeds.clone(), self.class_of_cell.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_cells_balanced() {
        let l = generate_layout(256, 20, 7).unwrap();
        assert_eq!(l.n_cells(), 20);
        assert!(l.is_partition());
        assert_eq!(l.class_cell_counts(), [10, 10]);
    }

    #[test]
    fn two_cells_tile_small_image() {
        let l = generate_layout(4, 2, 0).unwrap();
        assert_eq!(l.cell_pixel_counts().iter().sum::<usize>(), 16);
        assert!(l.cell_pixel_counts().iter().all(|&c| c >= 1));
    }

    #[test]
    fn single_cell_rejected() {
        assert!(matches!(generate_layout(4, 1, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_layout(256, 20, 7).unwrap();
        let b = generate_layout(256, 20, 7).unwrap();
        assert_eq!(a.cell_of(), b.cell_of());
        assert_ne!(a.cell_of(), generate_layout(256, 20, 8).unwrap().cell_of());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // Pixel (1, 0) is equidistant from both seeds.
        let l = VoronoiLayout::from_seeds(3, vec![[0, 0], [2, 0]], vec![0, 1]).unwrap();
        assert_eq!(l.cell_at(1, 0), 0);
        assert_eq!(l.cell_at(2, 0), 1);
    }

    #[test]
    fn record_rebuilds_identical_layout() {
        let l = generate_layout(32, 20, 3).unwrap();
        assert_eq!(LayoutRecord::from(&l).rebuild().unwrap(), l);
    }
}
