//! Small synthetic datasets for the demos and parity checks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::train::FloatTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major features `[n, features]`.
    pub x: Vec<f64>,
    /// Row-major regression targets `[n, outputs]`: a single 0/1 column
    /// for two classes, one-hot otherwise.
    pub y: Vec<f64>,
    pub labels: Vec<usize>,
    pub features: usize,
    pub outputs: usize,
}

impl Dataset {
    fn from_labels(x: Vec<f64>, labels: Vec<usize>, features: usize, classes: usize) -> Self {
        let outputs = if classes == 2 { 1 } else { classes };
        let y = labels
            .iter()
            .flat_map(|&l| {
                (0..outputs).map(move |j| {
                    if outputs == 1 {
                        l as f64
                    } else {
                        (j == l) as u8 as f64
                    }
                })
            })
            .collect();
        Self {
            x,
            y,
            labels,
            features,
            outputs,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn x_tensor(&self) -> Result<FloatTensor> {
        FloatTensor::new(self.x.clone(), vec![self.len(), self.features])
    }

    pub fn y_tensor(&self) -> Result<FloatTensor> {
        FloatTensor::new(self.y.clone(), vec![self.len(), self.outputs])
    }

    /// The rows `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let (f, o) = (self.features, self.outputs);
        Dataset {
            x: rows
                .iter()
                .flat_map(|&r| self.x[r * f..(r + 1) * f].to_vec())
                .collect(),
            y: rows
                .iter()
                .flat_map(|&r| self.y[r * o..(r + 1) * o].to_vec())
                .collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            features: f,
            outputs: o,
        }
    }

    /// First `at` rows and the rest.
    pub fn split(&self, at: usize) -> (Dataset, Dataset) {
        let at = at.min(self.len());
        let head: Vec<usize> = (0..at).collect();
        let tail: Vec<usize> = (at..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }
}

/// The four XOR points with 0/1 targets.
pub fn xor() -> Dataset {
    let x = vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
    Dataset::from_labels(x, vec![0, 1, 1, 0], 2, 2)
}

/// Noisy XOR: points scattered around the four corners of `[-1, 1]^2`,
/// labelled by whether the coordinates' signs differ.
pub fn xor_blobs(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).expect("noise must be finite and non-negative");
    let mut x = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let a: bool = rng.gen();
        let b: bool = rng.gen();
        let cx = if a { 1.0 } else { -1.0 };
        let cy = if b { 1.0 } else { -1.0 };
        x.push(cx + normal.sample(&mut rng));
        x.push(cy + normal.sample(&mut rng));
        labels.push((a != b) as usize);
    }
    Dataset::from_labels(x, labels, 2, 2)
}

/// Two interleaved half circles.
pub fn moons(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).expect("noise must be finite and non-negative");
    let mut x = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.gen_range(0.0..std::f64::consts::PI);
        let label = i % 2;
        let (px, py) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        x.push(px + normal.sample(&mut rng));
        x.push(py + normal.sample(&mut rng));
        labels.push(label);
    }
    Dataset::from_labels(x, labels, 2, 2)
}

/// Gaussian clusters around random centres in `[-3, 3]^features`.
pub fn blobs(n: usize, classes: usize, features: usize, spread: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let centres: Vec<f64> = (0..classes * features)
        .map(|_| rng.gen_range(-3.0..3.0))
        .collect();
    let normal = Normal::new(0.0, spread).expect("spread must be finite and non-negative");
    let mut x = Vec::with_capacity(n * features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for f in 0..features {
            x.push(centres[c * features + f] + normal.sample(&mut rng));
        }
        labels.push(c);
    }
    Dataset::from_labels(x, labels, features, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_targets() {
        let d = xor();
        assert_eq!(d.len(), 4);
        assert_eq!(d.y, vec![0.0, 1.0, 1.0, 0.0]);
        let b = blobs(30, 3, 4, 0.5, 1);
        assert_eq!(b.outputs, 3);
        assert_eq!(b.x.len(), 120);
        assert!(b
            .y
            .chunks(3)
            .zip(&b.labels)
            .all(|(r, &l)| r[l] == 1.0 && r.iter().sum::<f64>() == 1.0));
        let (h, t) = moons(10, 0.1, 2).split(7);
        assert_eq!((h.len(), t.len()), (7, 3));
        assert_eq!(xor_blobs(50, 0.2, 3), xor_blobs(50, 0.2, 3));
    }
}
