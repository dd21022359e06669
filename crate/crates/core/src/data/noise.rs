use crate::error::{usage_err, Result};
use crate::random::Rng;
use crate::{Scalar, Tensor};

/// Gaussian noise level on the `[0, 255]` scale plus the seed of its stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// Adds i.i.d. `N(0, (sigma/255)^2)` noise to every element, in storage
/// order, drawn from [`Rng::new(seed)`](Rng::new). The result is not
/// clipped.
pub fn add_awgn<T: Scalar>(image: &Tensor<T>, spec: NoiseSpec) -> Result<Tensor<T>> {
    let mut rng = Rng::new(spec.seed);
    add_awgn_with(image, spec.sigma, &mut rng)
}

pub(crate) fn add_awgn_with<T: Scalar>(image: &Tensor<T>, sigma: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(usage_err!("noise sigma must be finite and non-negative, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let std = sigma / 255.0;
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = T::from_f64(v.to_f64() + std * rng.normal());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Shape;

    #[test]
    fn zero_sigma_is_identity() {
        let x = crate::testutil::rand_tensor::<f32>(Shape::new(1, 3, 5, 5), 1, 1.0);
        assert_eq!(add_awgn(&x, NoiseSpec { sigma: 0.0, seed: 9 }).unwrap(), x);
    }

    #[test]
    fn negative_sigma_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        assert!(matches!(add_awgn(&x, NoiseSpec { sigma: -1.0, seed: 0 }), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn sample_statistics() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 256, 256), 0.5);
        let y = add_awgn(&x, NoiseSpec { sigma: 50.0, seed: 2024 }).unwrap();
        let n = y.len() as f64;
        let noise: alloc::vec::Vec<f64> = y.data().iter().map(|v| v - 0.5).collect();
        let mean = noise.iter().sum::<f64>() / n;
        let var = noise.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let target = 50.0 / 255.0;
        assert!((var.sqrt() - target).abs() < 0.02 * target);
        assert!(mean.abs() < 0.002);
    }

    #[test]
    fn reproducible() {
        let x = Tensor::<f32>::full(Shape::new(1, 3, 8, 8), 0.25);
        let spec = NoiseSpec { sigma: 25.0, seed: 77 };
        let a = add_awgn(&x, spec).unwrap();
        assert_eq!(a, add_awgn(&x, spec).unwrap());
        assert_ne!(a, add_awgn(&x, NoiseSpec { seed: 78, ..spec }).unwrap());
    }
}
