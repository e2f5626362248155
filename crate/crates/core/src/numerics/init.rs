use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Parameter initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform on `[-a, a]`.
    Uniform(f32),
    Zeros,
    /// Constant one, used for normalization gains.
    Ones,
    /// Last axis cut into four equal blocks, each filled with its constant.
    Blocks([f32; 4]),
}

/// Deterministic tensor initialization from a 64-bit seed.
pub fn seeded_init(shape: &[usize], scheme: Init, seed: u64) -> Result<Tensor> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::invalid(format!("cannot initialize zero-size shape {shape:?}")));
    }
    match scheme {
        Init::Zeros => Ok(Tensor::zeros(shape)),
        Init::Ones => Ok(Tensor::filled(shape, 1.0)),
        Init::Blocks(values) => {
            let last = shape[shape.len() - 1];
            if !last.is_multiple_of(4) {
                return Err(Error::invalid(format!(
                    "block init needs a last axis divisible by 4, got {last}"
                )));
            }
            let q = last / 4;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|i| values[(i % last) / q]).collect();
            Tensor::new(shape.to_vec(), data)
        }
        Init::Uniform(a) => {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid(format!("uniform bound must be positive, got {a}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-a..=a)).collect();
            Tensor::new(shape.to_vec(), data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = seeded_init(&[4, 5], Init::Uniform(0.1), 9).unwrap();
        let b = seeded_init(&[4, 5], Init::Uniform(0.1), 9).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|v| (-0.1..=0.1).contains(v)));
        let c = seeded_init(&[4, 5], Init::Uniform(0.1), 10).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn zeros_and_errors() {
        let z = seeded_init(&[3, 2], Init::Zeros, 1).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(seeded_init(&[0, 2], Init::Zeros, 1).is_err());
        assert!(seeded_init(&[2], Init::Uniform(0.0), 1).is_err());
    }

    #[test]
    fn blocks_fill_quarters() {
        let t = seeded_init(&[2, 8], Init::Blocks([0.0, 1.0, 2.0, 3.0]), 0).unwrap();
        assert_eq!(&t.data()[..8], &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert_eq!(&t.data()[8..], &t.data()[..8]);
        assert!(seeded_init(&[1, 6], Init::Blocks([0.0; 4]), 0).is_err());
    }
}
