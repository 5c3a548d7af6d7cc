use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{Scalar, Tensor};

/// Glorot uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar>(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..fan_in * fan_out)
        .map(|_| T::from_f64(dist.sample(rng)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape")
}

/// Zero-mean normal entries with the given deviation.
pub fn normal<T: Scalar>(rng: &mut impl Rng, shape: &[usize], std_dev: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std_dev).expect("finite deviation");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Tensor<f64> = glorot_uniform(&mut rng, 16, 48);
        let bound = (6.0f64 / 64.0).sqrt();
        assert_eq!(t.shape(), &[16, 48]);
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn normal_is_seeded() {
        let a: Tensor<f32> = normal(&mut ChaCha8Rng::seed_from_u64(9), &[4, 4], 0.5);
        let b: Tensor<f32> = normal(&mut ChaCha8Rng::seed_from_u64(9), &[4, 4], 0.5);
        assert_eq!(a, b);
    }
}
