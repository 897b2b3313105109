//! Bottom-up spatial alignment.
//!
//! A shallow, already-aligned level is downsampled by space-to-depth with
//! attention ([`Stdds`]); the result and the next deeper lateral jointly
//! predict a deformable sampling field that warps the deep feature, and the
//! downsampled shallow feature is added back on top.

use crate::error::{Error, Result};
use crate::nn::{deform_conv2d, ChannelAttention, Conv2d, ConvSpec, OffsetField, SpatialAttention};
use crate::param::{Module, ParamFactory, Parameter};
use crate::tensor::ops::{add, concat_channels, narrow_channels, relu, sigmoid, strided_subsample};
use crate::tensor::{Element, Tensor};

const OFFSET_CHANNELS: usize = 18;
const MASK_CHANNELS: usize = 9;

/// `[B,C,H,W] -> [B,4C,H/2,W/2]`, phases `(0,0),(0,1),(1,0),(1,1)` in order.
pub fn space_to_depth<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    concat_channels(&[
        strided_subsample(x, 0, 0)?,
        strided_subsample(x, 0, 1)?,
        strided_subsample(x, 1, 0)?,
        strided_subsample(x, 1, 1)?,
    ])
}

/// Spatial attention, space-to-depth, channel attention over the `4C`
/// stacked phases, then a 1×1 compression back to `C`.
#[derive(Debug, Clone)]
pub struct Stdds<T: Element> {
    pub sa: SpatialAttention<T>,
    pub ca: ChannelAttention<T>,
    pub compress: Conv2d<T>,
}

impl<T: Element> Stdds<T> {
    pub fn new(f: &mut ParamFactory, name: &str, channels: usize, kernel: usize, reduction: usize) -> Result<Self> {
        f.scoped(name, |f| {
            Ok(Stdds {
                sa: SpatialAttention::new(f, "sa", kernel)?,
                ca: ChannelAttention::new(f, "ca", 4 * channels, reduction),
                compress: Conv2d::new(f, "compress", ConvSpec::new(4 * channels, channels, 1)),
            })
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let stacked = space_to_depth(&self.sa.forward(x)?)?;
        self.compress.forward(&self.ca.forward(&stacked)?)
    }
}

impl<T: Element> Module<T> for Stdds<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.sa.visit_params(f);
        self.ca.visit_params(f);
        self.compress.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.sa.visit_params_mut(f);
        self.ca.visit_params_mut(f);
        self.compress.visit_params_mut(f);
    }
}

pub fn stdds_param_count(channels: usize, kernel: usize, reduction: usize) -> usize {
    let sa = 2 * kernel * kernel + 1;
    let wide = 4 * channels;
    let hidden = crate::nn::hidden_width(wide, reduction);
    let ca = wide * hidden + hidden + hidden * wide + wide;
    let compress = wide * channels + channels;
    sa + ca + compress
}

#[derive(Debug, Clone)]
pub struct Spam<T: Element> {
    pub stdds: Stdds<T>,
    pub om1: Conv2d<T>,
    /// Zero-initialized: offsets start at 0 and masks at 0.5.
    pub om2: Conv2d<T>,
    pub dcn_w: Parameter<T>,
    pub dcn_b: Parameter<T>,
}

impl<T: Element> Spam<T> {
    pub fn new(f: &mut ParamFactory, name: &str, channels: usize, kernel: usize, reduction: usize) -> Result<Self> {
        f.scoped(name, |f| {
            Ok(Spam {
                stdds: Stdds::new(f, "stdds", channels, kernel, reduction)?,
                om1: Conv2d::new(f, "om1", ConvSpec::new(2 * channels, channels, 1)),
                om2: Conv2d::zeroed(
                    f,
                    "om2",
                    ConvSpec::new(channels, OFFSET_CHANNELS + MASK_CHANNELS, 3).padding(1),
                ),
                dcn_w: f.conv_weight("dcn_w", [channels, channels, 3, 3]),
                dcn_b: f.zeros("dcn_b", &[channels]),
            })
        })
    }

    pub fn offset_mask_head(&self, ds: &Tensor<T>, deep: &Tensor<T>) -> Result<OffsetField<T>> {
        let (a, b) = (ds.dims4("offset_mask_head")?, deep.dims4("offset_mask_head")?);
        if a != b {
            return Err(Error::shape(
                "offset_mask_head",
                format!("downsampled {:?} and deep {:?} differ", ds.shape(), deep.shape()),
            ));
        }
        let t = relu(&self.om1.forward(&concat_channels(&[ds.clone(), deep.clone()])?)?);
        let raw = self.om2.forward(&t)?;
        Ok(OffsetField {
            offsets: narrow_channels(&raw, 0, OFFSET_CHANNELS)?,
            masks: sigmoid(&narrow_channels(&raw, OFFSET_CHANNELS, MASK_CHANNELS)?),
        })
    }

    /// Aligns `deep` (`[B,C,H/2,W/2]`) using the shallower `shallow` (`[B,C,H,W]`).
    pub fn forward(&self, shallow: &Tensor<T>, deep: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, _, h, w] = shallow.dims4("spam_forward")?;
        let [_, _, hd, wd] = deep.dims4("spam_forward")?;
        if h != 2 * hd || w != 2 * wd {
            return Err(Error::shape(
                "spam_forward",
                format!("deep {hd}x{wd} is not half of shallow {h}x{w}"),
            ));
        }
        let ds = self.stdds.forward(shallow)?;
        let field = self.offset_mask_head(&ds, deep)?;
        let aligned = deform_conv2d(deep, self.dcn_w.tensor(), self.dcn_b.tensor(), &field)?;
        add(&aligned, &ds)
    }
}

impl<T: Element> Module<T> for Spam<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.stdds.visit_params(f);
        self.om1.visit_params(f);
        self.om2.visit_params(f);
        f(&self.dcn_w);
        f(&self.dcn_b);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.stdds.visit_params_mut(f);
        self.om1.visit_params_mut(f);
        self.om2.visit_params_mut(f);
        f(&mut self.dcn_w);
        f(&mut self.dcn_b);
    }
}

pub fn spam_forward<T: Element>(shallow: &Tensor<T>, deep: &Tensor<T>, p: &Spam<T>) -> Result<Tensor<T>> {
    p.forward(shallow, deep)
}
