use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// He-normal initialised conv weight `[cout, cin, k, k]` scaled by `gain`.
pub fn conv_weight<R: Rng + ?Sized>(
    rng: &mut R,
    cout: usize,
    cin: usize,
    k: usize,
    gain: f64,
) -> Tensor {
    let fan_in = (cin * k * k) as f64;
    let std = gain * (2.0 / fan_in).sqrt();
    let dims = [cout, cin, k, k];
    if std == 0.0 {
        return Tensor::zeros(dims);
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = (0..dims.iter().product::<usize>())
        .map(|_| normal.sample(rng))
        .collect();
    Tensor::from_vec(dims, data).expect("dims match")
}

pub fn bias(cout: usize) -> Tensor {
    Tensor::zeros([cout, 1, 1, 1])
}
