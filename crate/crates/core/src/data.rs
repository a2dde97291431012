//! Seeded synthetic image task: grayscale images in four classes built from
//! oriented bars and blobs under additive Gaussian noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub image_size: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { image_size: 16, train: 4096, valid: 1024, test: 1024, noise: 0.6, seed: 0 }
    }
}

pub const NUM_CLASSES: usize = 4;

/// Images `(n, 1, s, s)` with labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    image_size: usize,
    pixels: Vec<f64>,
    labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DataSplits {
    pub config: DatasetConfig,
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

fn draw_image<R: Rng + ?Sized>(class: usize, s: usize, noise: &Normal<f64>, rng: &mut R) -> Vec<f64> {
    let mut img = vec![0.0; s * s];
    let amp = rng.random_range(0.7..1.3);
    let len = rng.random_range(s / 2..=s - 1).max(2);
    match class {
        0 | 1 | 2 => {
            let (dx, dy): (isize, isize) = match class {
                0 => (1, 0),
                1 => (0, 1),
                _ => (1, 1),
            };
            let span = len as isize - 1;
            let max_x0 = s as isize - 1 - dx * span;
            let max_y0 = s as isize - 1 - dy * span;
            let x0 = rng.random_range(0..=max_x0.max(0) as i64) as isize;
            let y0 = rng.random_range(0..=max_y0.max(0) as i64) as isize;
            for t in 0..len as isize {
                let (x, y) = (x0 + dx * t, y0 + dy * t);
                if (0..s as isize).contains(&x) && (0..s as isize).contains(&y) {
                    img[y as usize * s + x as usize] += amp;
                }
            }
        }
        _ => {
            let sigma = s as f64 / rng.random_range(5.0..8.0);
            let cx = rng.random_range(0.25..0.75) * s as f64;
            let cy = rng.random_range(0.25..0.75) * s as f64;
            for y in 0..s {
                for x in 0..s {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    img[y * s + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
    }
    for p in &mut img {
        *p += noise.sample(rng);
    }
    img
}

impl Dataset {
    /// Balanced classes in shuffled order.
    pub fn generate(size: usize, count: usize, noise: f64, seed: u64) -> Result<Dataset> {
        if size < 3 {
            return Err(Error::Config("images must be at least 3x3".into()));
        }
        let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<usize> = (0..count).map(|i| i % NUM_CLASSES).collect();
        labels.shuffle(&mut rng);
        let mut pixels = Vec::with_capacity(count * size * size);
        for &l in &labels {
            pixels.extend(draw_image(l, size, &normal, &mut rng));
        }
        Ok(Dataset { image_size: size, pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gathers the given examples into one batch tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let px = self.image_size * self.image_size;
        let mut data = Vec::with_capacity(indices.len() * px);
        for &i in indices {
            data.extend_from_slice(&self.pixels[i * px..(i + 1) * px]);
        }
        let t = Tensor::new(vec![indices.len(), 1, self.image_size, self.image_size], data).expect("sizes agree");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Consecutive index chunks of at most `batch_size`.
    pub fn sequential_batches(&self, batch_size: usize) -> Vec<Vec<usize>> {
        (0..self.len()).collect::<Vec<_>>().chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }

    /// Full batches of a shuffled permutation; the remainder is dropped.
    pub fn shuffled_batches<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        idx.chunks_exact(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }

    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.len() / batch_size.max(1)
    }
}

impl DataSplits {
    pub fn generate(config: &DatasetConfig) -> Result<DataSplits> {
        let s = config.image_size;
        Ok(DataSplits {
            config: *config,
            train: Dataset::generate(s, config.train, config.noise, config.seed.wrapping_mul(3))?,
            valid: Dataset::generate(s, config.valid, config.noise, config.seed.wrapping_mul(3) + 1)?,
            test: Dataset::generate(s, config.test, config.noise, config.seed.wrapping_mul(3) + 2)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = Dataset::generate(8, 40, 0.3, 9).unwrap();
        let b = Dataset::generate(8, 40, 0.3, 9).unwrap();
        assert_eq!(a.pixels, b.pixels);
        for c in 0..NUM_CLASSES {
            assert_eq!(a.labels().iter().filter(|&&l| l == c).count(), 10);
        }
        let (t, l) = a.batch(&[0, 3]);
        assert_eq!(t.shape(), &[2, 1, 8, 8]);
        assert_eq!(l, vec![a.labels()[0], a.labels()[3]]);
    }

    #[test]
    fn batching() {
        let d = Dataset::generate(4, 10, 0.1, 0).unwrap();
        assert_eq!(d.sequential_batches(4).len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(d.shuffled_batches(4, &mut rng).len(), 2);
        assert!(Dataset::generate(2, 4, 0.1, 0).is_err());
    }
}
