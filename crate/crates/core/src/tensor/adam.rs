use super::{Param, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. The gradient buffer is left untouched;
/// callers zero it.
pub fn adam_step<T: Scalar>(param: &mut Param<T>, cfg: &AdamConfig) -> Result<()> {
    if !param.grad.all_finite() {
        return Err(Error::Training("non-finite gradient".into()));
    }
    param.step_count += 1;
    let t = param.step_count as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let step = T::from_f64(cfg.lr / c1);
    let inv_c2 = T::from_f64(1.0 / c2);
    let eps = T::from_f64(cfg.eps);

    let Param {
        value,
        grad,
        adam_m,
        adam_v,
        ..
    } = param;
    for (((w, &g), m), v) in value
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(adam_m.data_mut())
        .zip(adam_v.data_mut())
    {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        *w -= step * *m / ((*v * inv_c2).sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_grad_leaves_value() {
        let mut p = Param::new(Tensor::<f64>::full([1, 1, 1, 3], 0.7));
        adam_step(&mut p, &AdamConfig::default()).unwrap();
        assert!(p.value.data().iter().all(|&v| v == 0.7));
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn first_step_magnitude() {
        let mut p = Param::new(Tensor::<f64>::zeros([1, 1, 1, 1]));
        p.grad.fill(1.0);
        adam_step(&mut p, &AdamConfig::default()).unwrap();
        // m̂ = v̂ = 1 on the first step, so the update is lr / (1 + eps).
        let expected = 1e-3 / (1.0 + 1e-8);
        assert!((p.value.data()[0] + expected).abs() < 1e-15);
        assert!((expected - 9.99e-4).abs() < 1.1e-6);
        assert_eq!(p.grad.data(), &[1.0]);
    }

    #[test]
    fn identical_state_identical_update() {
        let mut a = Param::new(Tensor::<f32>::from_vec([1, 1, 1, 2], vec![0.3, -0.2]).unwrap());
        a.grad = Tensor::from_vec([1, 1, 1, 2], vec![0.5, -1.5]).unwrap();
        let mut b = a.clone();
        for _ in 0..3 {
            adam_step(&mut a, &AdamConfig::default()).unwrap();
            adam_step(&mut b, &AdamConfig::default()).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut p = Param::new(Tensor::<f32>::zeros([1, 1, 1, 2]));
        p.grad.data_mut()[1] = f32::NAN;
        assert!(matches!(adam_step(&mut p, &AdamConfig::default()), Err(Error::Training(_))));
        assert_eq!(p.step_count, 0);
    }
}
