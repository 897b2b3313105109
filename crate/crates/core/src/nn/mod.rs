//! Neural kernels and the small parameterized blocks built from them.

pub mod attention;
pub mod conv;
pub mod sample;

pub use attention::{ChannelAttention, SeBlock, SpatialAttention};
pub use conv::{conv2d, shared_group_conv1x1, ConvSpec};
pub use sample::{
    bilinear_sample, bilinear_upsample2x, deform_conv2d, nearest_upsample2x, OffsetField,
};

use crate::error::Result;
use crate::param::{Module, ParamFactory, Parameter};
use crate::tensor::{Element, Tensor};

/// A convolution layer: spec plus its weight and optional bias.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Element> {
    pub spec: ConvSpec,
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
}

impl<T: Element> Conv2d<T> {
    /// Kaiming weight, zero bias.
    pub fn new(f: &mut ParamFactory, name: &str, spec: ConvSpec) -> Self {
        f.scoped(name, |f| Conv2d {
            spec,
            weight: f.conv_weight("w", spec.weight_shape()),
            bias: spec.has_bias.then(|| f.zeros("b", &[spec.out_channels])),
        })
    }

    /// Weight and bias both zero.
    pub fn zeroed(f: &mut ParamFactory, name: &str, spec: ConvSpec) -> Self {
        f.scoped(name, |f| Conv2d {
            spec,
            weight: f.zeros("w", &spec.weight_shape()),
            bias: spec.has_bias.then(|| f.zeros("b", &[spec.out_channels])),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(
            x,
            &self.spec,
            self.weight.tensor(),
            self.bias.as_ref().map(Parameter::tensor),
        )
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Bottleneck width shared by the channel-attention and SE blocks.
pub fn hidden_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(8)
}
