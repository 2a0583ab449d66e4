use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labeled images `[N, H, W, 3]`.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Class colors; class `k` draws its blob in `PALETTE[k % len]`.
const PALETTE: [[f64; 3]; 4] = [[1.0, -0.5, -0.5], [-0.5, -0.5, 1.0], [-0.5, 1.0, -0.5], [1.0, 1.0, -1.0]];

/// Procedural "colored blob" images: faint Gaussian noise plus one soft
/// disc whose color identifies the class, at a random position and radius.
/// Labels cycle through the classes so the set is balanced.
pub fn blob_dataset<T: Element>(n: usize, classes: usize, res: usize, seed: u64) -> Result<Dataset<T>> {
    if n == 0 || res == 0 || !(2..=PALETTE.len()).contains(&classes) {
        return Err(Error::Config(format!("blob dataset needs n > 0, res > 0 and 2..={} classes", PALETTE.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * res * res * 3);
    let mut labels = Vec::with_capacity(n);
    let r = res as f64;
    for i in 0..n {
        let label = i % classes;
        let color = PALETTE[label];
        let cy = rng.gen_range(0.25 * r..0.75 * r);
        let cx = rng.gen_range(0.25 * r..0.75 * r);
        let radius = rng.gen_range(0.12 * r..0.25 * r);
        for y in 0..res {
            for x in 0..res {
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                let w = (-d2 / (2.0 * radius * radius)).exp();
                for c in color {
                    let noise: f64 = rng.sample(StandardNormal);
                    data.push(T::from_f64_lossy(w * c + 0.1 * noise));
                }
            }
        }
        labels.push(label);
    }
    Ok(Dataset { images: Tensor::new(vec![n, res, res, 3], data)?, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = blob_dataset::<f32>(8, 2, 14, 3).unwrap();
        let b = blob_dataset::<f32>(8, 2, 14, 3).unwrap();
        assert!(a.images.bitwise_eq(&b.images));
        assert_eq!(a.labels, [0, 1, 0, 1, 0, 1, 0, 1]);
        assert!(blob_dataset::<f32>(8, 1, 14, 3).is_err());
    }

    #[test]
    fn classes_separate_on_mean_color() {
        // red-minus-blue channel mean is a linear separator
        let d = blob_dataset::<f64>(32, 2, 28, 9).unwrap();
        let px = 28 * 28;
        for (i, &label) in d.labels.iter().enumerate() {
            let img = &d.images.data()[i * px * 3..(i + 1) * px * 3];
            let score: f64 = img.chunks(3).map(|p| p[0] - p[2]).sum::<f64>() / px as f64;
            assert_eq!(score > 0.0, label == 0, "sample {i}: {score}");
        }
    }
}
