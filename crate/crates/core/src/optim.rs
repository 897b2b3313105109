//! First-order optimizers over a module's parameter registry.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::Module;
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum Rule {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Rule {
    pub fn sgd(lr: f64) -> Self {
        Rule::Sgd { lr, momentum: 0.0 }
    }

    pub fn adam(lr: f64) -> Self {
        Rule::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Default, Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Per-parameter state is keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Optimizer {
    rule: Rule,
    state: HashMap<String, Slot>,
}

impl Optimizer {
    pub fn new(rule: Rule) -> Self {
        Optimizer {
            rule,
            state: HashMap::new(),
        }
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    /// Updates every parameter in place and clears its gradient. Fails without
    /// touching anything if some parameter has no gradient.
    pub fn step<T: Element>(&mut self, module: &mut dyn Module<T>) -> Result<()> {
        if let Some(p) = module.params().into_iter().find(|p| p.grad().is_none()) {
            return Err(Error::Contract(format!(
                "parameter `{}` has no gradient",
                p.name()
            )));
        }
        let rule = self.rule;
        let state = &mut self.state;
        module.visit_params_mut(&mut |p| {
            let grad = p.grad().expect("checked above").to_vec();
            let slot = state.entry(p.name().to_string()).or_default();
            let mut data = p.tensor().to_vec();
            match rule {
                Rule::Sgd { lr, momentum } => {
                    if momentum == 0.0 {
                        for (w, g) in data.iter_mut().zip(&grad) {
                            *w = T::from_f64(w.as_f64() - lr * g.as_f64());
                        }
                    } else {
                        if slot.m.is_empty() {
                            slot.m = vec![0.0; data.len()];
                        }
                        for ((w, g), m) in data.iter_mut().zip(&grad).zip(&mut slot.m) {
                            *m = momentum * *m + g.as_f64();
                            *w = T::from_f64(w.as_f64() - lr * *m);
                        }
                    }
                }
                Rule::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    if slot.m.is_empty() {
                        slot.m = vec![0.0; data.len()];
                        slot.v = vec![0.0; data.len()];
                    }
                    slot.t += 1;
                    let bc1 = 1.0 - beta1.powi(slot.t as i32);
                    let bc2 = 1.0 - beta2.powi(slot.t as i32);
                    for (i, w) in data.iter_mut().enumerate() {
                        let g = grad[i].as_f64();
                        let m = &mut slot.m[i];
                        let v = &mut slot.v[i];
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let step = lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                        *w = T::from_f64(w.as_f64() - step);
                    }
                }
            }
            p.set_data(data).expect("same length");
            p.zero_grad();
        });
        Ok(())
    }
}
