//! Grouped aggregation lateral connection.
//!
//! The input channels are cut into `g` contiguous groups, one 1×1 kernel is
//! shared across all groups, and every output channel is a learned scalar
//! mix of all `g * C_out` intermediate channels.

use crate::error::{Error, Result};
use crate::nn::{conv2d, shared_group_conv1x1, ConvSpec};
use crate::param::{Init, Module, ParamFactory, Parameter};
use crate::tensor::ops::reshape;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone)]
pub struct Galm<T: Element> {
    /// `[C_out, C_in/g, 1, 1]`
    pub shared_w: Parameter<T>,
    /// `[C_out]`
    pub shared_b: Parameter<T>,
    /// `[C_out (s), g (j), C_out (t)]`
    pub mix_w: Parameter<T>,
    groups: usize,
}

impl<T: Element> Galm<T> {
    /// Kaiming shared kernel and identity-over-groups mixing, so a fresh
    /// module averages the `g` shared-conv outputs channel by channel.
    pub fn new(f: &mut ParamFactory, name: &str, c_in: usize, c_out: usize, groups: usize) -> Result<Self> {
        if groups == 0 || c_in % groups != 0 {
            return Err(Error::config(
                "galm_groups",
                format!("{groups} groups do not divide {c_in} input channels"),
            ));
        }
        Ok(f.scoped(name, |f| Galm {
            shared_w: f.conv_weight("shared_w", [c_out, c_in / groups, 1, 1]),
            shared_b: f.zeros("shared_b", &[c_out]),
            mix_w: f.make("mix_w", &[c_out, groups, c_out], Init::GroupMixIdentity { groups }),
            groups,
        }))
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn out_channels(&self) -> usize {
        self.shared_w.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        galm_forward(x, self)
    }
}

impl<T: Element> Module<T> for Galm<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        f(&self.shared_w);
        f(&self.shared_b);
        f(&self.mix_w);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.shared_w);
        f(&mut self.shared_b);
        f(&mut self.mix_w);
    }
}

pub fn galm_forward<T: Element>(x: &Tensor<T>, p: &Galm<T>) -> Result<Tensor<T>> {
    let g = p.groups;
    let c_out = p.out_channels();
    let hat = shared_group_conv1x1(x, g, p.shared_w.tensor(), Some(p.shared_b.tensor()))?;
    // Intermediate channel j*C_out + t meets mix_w[s, j, t]: the row-major
    // layout of mix_w is already that of a [C_out, g*C_out, 1, 1] kernel.
    let mix = reshape(p.mix_w.tensor(), &[c_out, g * c_out, 1, 1])?;
    conv2d(&hat, &ConvSpec::new(g * c_out, c_out, 1).bias(false), &mix, None)
}

pub fn galm_param_count(c_in: usize, c_out: usize, g: usize) -> usize {
    c_out * (c_in / g) + c_out + c_out * g * c_out
}
