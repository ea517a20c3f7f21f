use std::collections::BTreeMap;

use crate::error::{shape_err, Result};
use crate::graph::Gradients;
use crate::real::Real;
use crate::tensor::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: Option<StepDecay>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: None,
        }
    }
}

/// Multiplies the learning rate by `factor` every `every` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDecay {
    pub every: u64,
    pub factor: f64,
}

/// Bias-corrected Adam. Moments are created lazily per parameter name.
#[derive(Clone, Debug)]
pub struct Adam<T: Real = f32> {
    config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor<T>>,
    second: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        match self.config.decay {
            Some(d) if d.every > 0 => self.config.lr * d.factor.powi((self.step / d.every) as i32),
            _ => self.config.lr,
        }
    }

    /// Updates every parameter of `params` that has an entry in `grads`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        for (name, g) in grads.iter() {
            if let Some(p) = params.get(name) {
                if p.shape() != g.shape() {
                    return Err(shape_err(
                        "adam",
                        format!("{name}: param {:?} vs grad {:?}", p.shape(), g.shape()),
                    ));
                }
            }
        }
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pv, mv), vv), gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                let gf = gv.f64();
                let mf = beta1 * mv.f64() + (1.0 - beta1) * gf;
                let vf = beta2 * vv.f64() + (1.0 - beta2) * gf * gf;
                *mv = T::of(mf);
                *vv = T::of(vf);
                let update = lr * (mf / c1) / ((vf / c2).sqrt() + eps);
                if update != 0.0 {
                    *pv = T::of(pv.f64() - update);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Feed, Graph};

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = ParamStore::<f32>::new();
        params.insert("w", Tensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap());
        let before = params.clone();
        let mut g = Graph::<f32>::new();
        let w = g.param("w");
        let z = g.scale(w, 0.0);
        let s = g.sum(z);
        let fwd = g.forward(&Feed::new().with_params(&params)).unwrap();
        let grads = fwd.backward(s).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut params, &grads).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let lr = 0.01;
        let mut params = ParamStore::<f64>::new();
        params.insert("w", Tensor::new(&[3], vec![1.0, 1.0, 1.0]).unwrap());
        let mut g = Graph::<f64>::new();
        let w = g.param("w");
        let c = g.input("c");
        let prod = g.mul(w, c);
        let s = g.sum(prod);
        let coeffs = Tensor::new(&[3], vec![2.0, -0.5, 40.0]).unwrap();
        let fwd = g
            .forward(&Feed::new().with_params(&params).with("c", &coeffs))
            .unwrap();
        let grads = fwd.backward(s).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(lr));
        let mut next = params.clone();
        adam.step(&mut next, &grads).unwrap();
        for (i, gi) in coeffs.data().iter().enumerate() {
            let delta = next.get("w").unwrap().data()[i] - 1.0;
            let expected = -lr * gi.signum();
            assert!((delta - expected).abs() < lr * 1e-6, "{delta} vs {expected}");
        }
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let target = [0.5, -1.25, 2.0, 0.0];
        let c = Tensor::<f64>::new(&[4], target.to_vec()).unwrap();
        let mut params = ParamStore::new();
        params.insert("w", Tensor::<f64>::zeros(&[4]));
        let mut g = Graph::<f64>::new();
        let w = g.param("w");
        let ci = g.input("c");
        let d = g.sub(w, ci);
        let loss = g.sum_squares(d);
        let mut adam = Adam::new(AdamConfig::with_lr(0.05));
        for _ in 0..200 {
            let grads = {
                let fwd = g
                    .forward(&Feed::new().with_params(&params).with("c", &c))
                    .unwrap();
                fwd.backward(loss).unwrap()
            };
            adam.step(&mut params, &grads).unwrap();
        }
        for (w, t) in params.get("w").unwrap().data().iter().zip(target) {
            assert!((w - t).abs() < 1e-3, "{w} vs {t}");
        }
    }

    #[test]
    fn step_decay_scales_lr() {
        let mut adam = Adam::<f32>::new(AdamConfig {
            decay: Some(StepDecay {
                every: 2,
                factor: 0.5,
            }),
            ..AdamConfig::with_lr(1.0)
        });
        let mut p = ParamStore::new();
        let grads = Gradients::default();
        assert_eq!(adam.current_lr(), 1.0);
        adam.step(&mut p, &grads).unwrap();
        adam.step(&mut p, &grads).unwrap();
        assert_eq!(adam.current_lr(), 0.5);
    }
}
