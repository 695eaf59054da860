//! Adam with two learning-rate groups, cosine annealing and the flow freeze window.

use std::collections::BTreeMap;

use crate::autodiff::graph::Gradients;
use crate::error::{Result, VsrError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::weights::ModelWeights;

/// Parameters whose names start with this prefix belong to the flow group.
pub const FLOW_PREFIX: &str = "flow.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Main,
    Flow,
}

impl ParamGroup {
    pub fn of(name: &str) -> Self {
        if name.starts_with(FLOW_PREFIX) {
            ParamGroup::Flow
        } else {
            ParamGroup::Main
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr_main: f64,
    pub lr_flow: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr_main: 1e-4,
            lr_flow: 2.5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rates in effect for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupLrs {
    pub main: f64,
    pub flow: f64,
}

#[derive(Debug, Clone)]
struct Moments<T: Scalar> {
    first: Tensor<T>,
    second: Tensor<T>,
    steps: u64,
}

/// Adam moments per parameter plus the global step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Scalar = f32> {
    pub config: AdamConfig,
    moments: BTreeMap<String, Moments<T>>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamConfig) -> Self {
        OptimizerState {
            config,
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Learning rates at the current step under a cosine schedule over `total_steps`.
    pub fn scheduled_lrs(&self, total_steps: u64) -> GroupLrs {
        GroupLrs {
            main: cosine_lr(self.step, total_steps, self.config.lr_main),
            flow: cosine_lr(self.step, total_steps, self.config.lr_flow),
        }
    }

    /// One bias-corrected Adam update of every parameter.
    ///
    /// Flow-group parameters are left untouched (moments included) while
    /// `freeze_flow` is set. Every other parameter must have a gradient.
    pub fn adam_step(
        &mut self,
        params: &mut ModelWeights<T>,
        grads: &Gradients<T>,
        lrs: GroupLrs,
        freeze_flow: bool,
    ) -> Result<()> {
        let names: Vec<String> = params.names().map(str::to_string).collect();
        let missing: Vec<&str> = names
            .iter()
            .filter(|n| !(freeze_flow && ParamGroup::of(n) == ParamGroup::Flow))
            .filter(|n| grads.get(n).is_none())
            .map(|n| n.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(VsrError::Usage(format!(
                "missing gradients for: {}",
                missing.join(", ")
            )));
        }
        let (b1, b2) = (T::of(self.config.beta1), T::of(self.config.beta2));
        let eps = T::of(self.config.eps);
        for name in &names {
            let group = ParamGroup::of(name);
            if freeze_flow && group == ParamGroup::Flow {
                continue;
            }
            let grad = grads.get(name).expect("checked above");
            let param = params.get_mut(name).expect("listed name");
            param.expect_same_shape(grad, name)?;
            let m = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                first: Tensor::zeros(param.shape()),
                second: Tensor::zeros(param.shape()),
                steps: 0,
            });
            m.steps += 1;
            let t = m.steps as i32;
            let bc1 = T::one() - b1.powi(t);
            let bc2 = T::one() - b2.powi(t);
            let lr = T::of(match group {
                ParamGroup::Main => lrs.main,
                ParamGroup::Flow => lrs.flow,
            });
            let first = m.first.data_mut();
            let second = m.second.data_mut();
            for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
                first[i] = b1 * first[i] + (T::one() - b1) * g;
                second[i] = b2 * second[i] + (T::one() - b2) * g * g;
                let m_hat = first[i] / bc1;
                let v_hat = second[i] / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// `lr_base · (1 + cos(π · step / total_steps)) / 2`; steps past the end
/// clamp to zero.
pub fn cosine_lr(step: u64, total_steps: u64, lr_base: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        if step > total_steps {
            log::warn!("cosine_lr: step {step} beyond schedule length {total_steps}, using lr 0");
        }
        return 0.0;
    }
    let progress = step as f64 / total_steps as f64;
    lr_base * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0
}

/// Whether flow parameters are frozen at `step`.
pub fn freeze_flow(step: u64, freeze_steps: u64) -> bool {
    step < freeze_steps
}
