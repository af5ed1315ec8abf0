use crate::diff::Tensor;
use crate::scalar::Scalar;
use crate::train::TrainError;

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(shapes: &[&[usize]], betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        let zeros = || shapes.iter().map(|s| Tensor::zeros(s)).collect::<Vec<_>>();
        Self {
            beta1: betas.0,
            beta2: betas.1,
            eps,
            weight_decay,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn for_params(params: &[Tensor<T>], betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(Tensor::shape).collect();
        Self::new(&shapes, betas, eps, weight_decay)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter:
    ///
    /// ```text
    /// p <- p - lr * wd * p
    /// m <- b1 m + (1 - b1) g,   v <- b2 v + (1 - b2) g^2
    /// p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    /// ```
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "{} params, {} grads, optimizer tracks {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(TrainError::ShapeMismatch(format!(
                    "param {i}: {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let one = T::one();
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr = T::of(lr);
        let decay = one - lr * T::of(self.weight_decay);
        let eps = T::of(self.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for k in 0..pd.len() {
                let gk = g.data()[k];
                md[k] = b1 * md[k] + (one - b1) * gk;
                vd[k] = b2 * vd[k] + (one - b2) * gk * gk;
                let mhat = md[k] / c1;
                let vhat = vd[k] / c2;
                pd[k] = pd[k] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moments as `adamw.m.<name>` / `adamw.v.<name>` plus `adamw.step`.
    pub fn to_named(&self, names: &[String]) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::with_capacity(2 * names.len() + 1);
        for (n, m) in names.iter().zip(&self.m) {
            out.push((format!("adamw.m.{n}"), m.clone()));
        }
        for (n, v) in names.iter().zip(&self.v) {
            out.push((format!("adamw.v.{n}"), v.clone()));
        }
        out.push(("adamw.step".into(), Tensor::vector(vec![T::of(self.step as f64)])));
        out
    }

    /// Restores moments written by [`AdamW::to_named`].
    pub fn load_named(&mut self, names: &[String], state: &[(String, Tensor<T>)]) -> Result<(), TrainError> {
        let find = |key: String| {
            state
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| TrainError::ShapeMismatch(format!("optimizer state lacks `{key}`")))
        };
        for (i, n) in names.iter().enumerate() {
            let (m, v) = (find(format!("adamw.m.{n}"))?, find(format!("adamw.v.{n}"))?);
            if m.shape() != self.m[i].shape() || v.shape() != self.v[i].shape() {
                return Err(TrainError::ShapeMismatch(format!("optimizer state for `{n}`")));
            }
            self.m[i] = m;
            self.v[i] = v;
        }
        self.step = find("adamw.step".into())?.item().to_f64_lossless() as u64;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_opt(wd: f64) -> AdamW<f64> {
        AdamW::new(&[&[1]], (0.9, 0.999), 1e-8, wd)
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = vec![Tensor::vector(vec![0.7, -3.0, 2.5])];
        let before = p.clone();
        let mut opt = AdamW::for_params(&p, (0.9, 0.999), 1e-8, 0.0);
        for _ in 0..3 {
            opt.step(&mut p, &[Tensor::zeros(&[3])], 1e-3).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![Tensor::vector(vec![0.0])];
        let mut opt = scalar_opt(0.0);
        opt.step(&mut p, &[Tensor::vector(vec![1.0])], 0.001).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        let expected = -0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn decay_is_decoupled_from_moments() {
        let mut p = vec![Tensor::vector(vec![1.0])];
        let mut opt = scalar_opt(0.01);
        opt.step(&mut p, &[Tensor::vector(vec![0.0])], 0.001).unwrap();
        assert!((p[0].item() - 0.99999).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut opt = AdamW::for_params(&p, (0.9, 0.999), 1e-8, 0.0);
        assert!(matches!(
            opt.step(&mut p, &[Tensor::vector(vec![1.0])], 0.1),
            Err(TrainError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn state_round_trip() {
        let mut p = vec![Tensor::vector(vec![1.0, 2.0]), Tensor::scalar(0.5)];
        let mut opt = AdamW::for_params(&p, (0.9, 0.999), 1e-8, 0.01);
        opt.step(&mut p, &[Tensor::vector(vec![0.3, -0.1]), Tensor::scalar(2.0)], 0.01).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let saved = opt.to_named(&names);
        let mut fresh = AdamW::for_params(&p, (0.9, 0.999), 1e-8, 0.01);
        fresh.load_named(&names, &saved).unwrap();
        assert_eq!(fresh, opt);
    }
}
