use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Float;

/// Samples a tensor from `N(0, std²)`.
pub fn normal_tensor<T: Float, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> ArrayD<T> {
    let dist = Normal::new(0.0, std).expect("finite, non-negative std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("element count")
}

/// He (Kaiming) normal initialization: zero mean, std `sqrt(2 / fan_in)`.
pub fn he_init<T: Float, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<T> {
    assert!(fan_in >= 1, "fan_in must be positive");
    normal_tensor(shape, (2.0 / fan_in as f64).sqrt(), rng)
}
