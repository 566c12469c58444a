use super::{Gradients, PolicyModel, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub step_count: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(model: &mut PolicyModel<F>, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
        Self::with_shapes(&shapes, config)
    }

    pub fn with_shapes(shapes: &[usize], config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            m: shapes.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn apply(&mut self, params: Vec<&mut [F]>, grads: &[&[F]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::ShapeMismatch {
                    expected: m.len(),
                    got: if p.len() != m.len() { p.len() } else { g.len() },
                });
            }
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
        let bc1 = F::lit(1.0 - c.beta1.powi(t));
        let bc2 = F::lit(1.0 - c.beta2.powi(t));
        let lr = F::lit(c.lr);
        let eps = F::lit(c.eps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// One Adam step on every trainable parameter of the model.
pub fn adam_step<F: Real>(
    model: &mut PolicyModel<F>,
    grads: &Gradients<F>,
    state: &mut AdamState<F>,
) -> Result<()> {
    let g = grads.slices();
    state.apply(model.params_mut(), &g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5f64, -2.0];
        let mut s = AdamState::<f64>::with_shapes(&[2], AdamConfig::default());
        s.apply(vec![&mut p[..]], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![0.5, -2.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![1.0f64];
        let mut s = AdamState::<f64>::with_shapes(&[1], AdamConfig::default());
        s.apply(vec![&mut p[..]], &[&[1.0]]).unwrap();
        // m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "{}", p[0]);
    }

    #[test]
    fn path_dependence() {
        let mut two = vec![0.0f64];
        let mut s = AdamState::<f64>::with_shapes(&[1], AdamConfig::default());
        s.apply(vec![&mut two[..]], &[&[1.0]]).unwrap();
        s.apply(vec![&mut two[..]], &[&[1.0]]).unwrap();

        let mut once = vec![0.0f64];
        let cfg = AdamConfig {
            lr: 2e-3,
            ..AdamConfig::default()
        };
        let mut s2 = AdamState::<f64>::with_shapes(&[1], cfg);
        s2.apply(vec![&mut once[..]], &[&[1.0]]).unwrap();
        assert_ne!(two[0], once[0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0f64; 3];
        let mut s = AdamState::<f64>::with_shapes(&[2], AdamConfig::default());
        assert!(s.apply(vec![&mut p[..]], &[&[0.0; 3]]).is_err());
        assert_eq!(s.step_count, 0);
    }
}
