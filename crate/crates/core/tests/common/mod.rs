#![allow(dead_code)]

use cookstate::rng::Rng;
use cookstate::Tensor64;

pub fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor64 {
    Tensor64::from_fn(shape.to_vec(), |_| rng.normal())
}

/// ‖a − b‖ / max(‖a‖ + ‖b‖, 1e-12).
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (norm(a) + norm(b)).max(1e-12)
}

/// Central differences of `f` at every element of `x`.
pub fn numeric_grad(x: &Tensor64, f: impl Fn(&Tensor64) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let v = x.data()[i];
            probe.data_mut()[i] = v + h;
            let up = f(&probe);
            probe.data_mut()[i] = v - h;
            let down = f(&probe);
            probe.data_mut()[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `Σ y·r`, the scalar probe used to pull back a cotangent `r`.
pub fn project(y: &Tensor64, r: &Tensor64) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}
pub mod grad;
pub mod oracles;
