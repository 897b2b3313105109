//! Spatial attention, channel attention and squeeze-excitation blocks.

use super::{hidden_width, Conv2d, ConvSpec};
use crate::error::{Error, Result};
use crate::param::{Module, ParamFactory, Parameter};
use crate::tensor::ops::{add, concat_channels, mul, reduce, relu, sigmoid, Reduction};
use crate::tensor::{Element, Tensor};

/// `x · σ(conv_k([mean_c(x); max_c(x)]))`, the map broadcast over channels.
#[derive(Debug, Clone)]
pub struct SpatialAttention<T: Element> {
    pub conv: Conv2d<T>,
}

impl<T: Element> SpatialAttention<T> {
    pub fn new(f: &mut ParamFactory, name: &str, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::config(
                "attn_kernel",
                format!("spatial attention kernel must be odd, got {kernel}"),
            ));
        }
        let spec = ConvSpec::new(2, 1, kernel).padding(kernel / 2);
        Ok(SpatialAttention {
            conv: f.scoped(name, |f| Conv2d::new(f, "conv", spec)),
        })
    }

    pub fn map(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let pooled = concat_channels(&[
            reduce(x, Reduction::MeanOverChannels)?,
            reduce(x, Reduction::MaxOverChannels)?,
        ])?;
        Ok(sigmoid(&self.conv.forward(&pooled)?))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        mul(x, &self.map(x)?)
    }
}

impl<T: Element> Module<T> for SpatialAttention<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.conv.visit_params(f)
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.conv.visit_params_mut(f)
    }
}

/// Two 1×1 convolutions `C → hidden → C` with relu in between.
#[derive(Debug, Clone)]
pub struct Bottleneck<T: Element> {
    pub fc1: Conv2d<T>,
    pub fc2: Conv2d<T>,
}

impl<T: Element> Bottleneck<T> {
    fn new(f: &mut ParamFactory, channels: usize, reduction: usize) -> Self {
        let hidden = hidden_width(channels, reduction);
        Bottleneck {
            fc1: Conv2d::new(f, "fc1", ConvSpec::new(channels, hidden, 1)),
            fc2: Conv2d::new(f, "fc2", ConvSpec::new(hidden, channels, 1)),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc2.forward(&relu(&self.fc1.forward(x)?))
    }
}

impl<T: Element> Module<T> for Bottleneck<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.fc1.visit_params_mut(f);
        self.fc2.visit_params_mut(f);
    }
}

/// CBAM-style channel attention: a shared bottleneck over the global average
/// and global max vectors, summed, squashed and broadcast onto `x`.
#[derive(Debug, Clone)]
pub struct ChannelAttention<T: Element> {
    pub mlp: Bottleneck<T>,
}

impl<T: Element> ChannelAttention<T> {
    pub fn new(f: &mut ParamFactory, name: &str, channels: usize, reduction: usize) -> Self {
        ChannelAttention {
            mlp: f.scoped(name, |f| Bottleneck::new(f, channels, reduction)),
        }
    }

    /// Per-channel weights `[B,C,1,1]`.
    pub fn weights(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let avg = self.mlp.forward(&reduce(x, Reduction::GlobalAvg)?)?;
        let max = self.mlp.forward(&reduce(x, Reduction::GlobalMax)?)?;
        Ok(sigmoid(&add(&avg, &max)?))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        mul(x, &self.weights(x)?)
    }
}

impl<T: Element> Module<T> for ChannelAttention<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.mlp.visit_params(f)
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.mlp.visit_params_mut(f)
    }
}

/// Squeeze-excitation transform applied independently at each position of a
/// 2×2 grid of pooled vectors. No output activation.
#[derive(Debug, Clone)]
pub struct SeBlock<T: Element> {
    pub mlp: Bottleneck<T>,
}

impl<T: Element> SeBlock<T> {
    pub fn new(f: &mut ParamFactory, name: &str, channels: usize, reduction: usize) -> Self {
        SeBlock {
            mlp: f.scoped(name, |f| Bottleneck::new(f, channels, reduction)),
        }
    }

    pub fn forward(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, _, h, w] = v.dims4("se_block")?;
        if (h, w) != (2, 2) {
            return Err(Error::shape(
                "se_block",
                format!("expects a 2x2 grid of pooled vectors, got {h}x{w}"),
            ));
        }
        self.mlp.forward(v)
    }
}

impl<T: Element> Module<T> for SeBlock<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.mlp.visit_params(f)
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.mlp.visit_params_mut(f)
    }
}
