//! Adam with bias-corrected moments.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TgsError};

/// A set of named trainable tensors. Gradient containers implement it too,
/// listing tensors in the same order as the parameters they belong to.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightDecay {
    /// L2 penalty added to the gradient before the moment updates.
    Coupled,
    /// Shrinkage applied directly to the parameters (AdamW).
    Decoupled,
}

#[derive(Debug, Clone)]
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self { first: Vec::new(), second: Vec::new(), step: 0, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamState {
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every tensor in `params` from the matching tensor in
    /// `grads`. A non-finite gradient aborts before anything is modified.
    pub fn step<P: Parameters + ?Sized, G: Parameters + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &G,
        lr: f64,
        weight_decay: f64,
        decay: WeightDecay,
    ) -> Result<()> {
        let grads = grads.tensors();
        for (name, g) in &grads {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(TgsError::NonFiniteGradient(name.clone()));
            }
        }
        let mut tensors = params.tensors_mut();
        if tensors.len() != grads.len() {
            return Err(TgsError::Shape(format!(
                "{} parameter tensors but {} gradient tensors",
                tensors.len(),
                grads.len()
            )));
        }
        if self.first.is_empty() {
            self.first = tensors.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (idx, ((name, p), (_, g))) in tensors.iter_mut().zip(&grads).enumerate() {
            if p.len() != g.len() || self.first[idx].len() != p.len() {
                return Err(TgsError::Shape(format!("gradient for {name} has the wrong length")));
            }
            let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
            let coupled = if decay == WeightDecay::Coupled { weight_decay } else { 0.0 };
            let shrink = if decay == WeightDecay::Decoupled { lr * weight_decay } else { 0.0 };
            let moments = self.first[idx].iter_mut().zip(self.second[idx].iter_mut());
            for ((x, &g), (m, v)) in p.iter_mut().zip(g.iter()).zip(moments) {
                let grad = g + coupled * *x;
                *m = b1 * *m + (1.0 - b1) * grad;
                *v = b2 * *v + (1.0 - b2) * grad * grad;
                *x -= shrink * *x;
                *x -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
