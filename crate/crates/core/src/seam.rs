//! Top-down semantic alignment: gate the upsampled deep feature with the
//! geometric mean of a channel mask and a pixel mask, plus a learned
//! saliency floor, before adding it to the shallow feature.

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvSpec, SeBlock};
use crate::param::{Module, ParamFactory, Parameter};
use crate::tensor::ops::{
    add, concat_channels, depth_to_space, interleave_channels, mul, reduce, sigmoid, sqrt, Reduction,
};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone)]
pub struct Seam<T: Element> {
    pub se: SeBlock<T>,
    /// Depthwise 2×2 collapse of the pooled grid, `[C,1,2,2]`.
    pub agg: Conv2d<T>,
    /// Grouped 7×7 over interleaved `(F̂_j, F_j)` pairs, `[C,2,7,7]`.
    pub pix: Conv2d<T>,
    /// Pre-sigmoid saliency factor, `[1,1,1,1]`.
    pub kappa: Parameter<T>,
}

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    a.dims4(op)?;
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("deep {:?} and shallow {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<T: Element> Seam<T> {
    /// The two mask convolutions and `kappa` start at zero, which makes a
    /// fresh module exactly `F̂ + F`.
    pub fn new(f: &mut ParamFactory, name: &str, channels: usize, reduction: usize) -> Self {
        f.scoped(name, |f| Seam {
            se: SeBlock::new(f, "se", channels, reduction),
            agg: Conv2d::zeroed(f, "agg", ConvSpec::new(channels, channels, 2).groups(channels)),
            pix: Conv2d::zeroed(
                f,
                "pix",
                ConvSpec::new(2 * channels, channels, 7).padding(3).groups(channels),
            ),
            kappa: f.zeros("kappa", &[1, 1, 1, 1]),
        })
    }

    /// `[B,C,1,1]` in (0,1).
    pub fn channel_mask(&self, f_hat: &Tensor<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("seam_channel_mask", f_hat, f)?;
        let grid = depth_to_space(&concat_channels(&[
            reduce(f_hat, Reduction::GlobalMax)?,
            reduce(f, Reduction::GlobalMax)?,
            reduce(f_hat, Reduction::GlobalAvg)?,
            reduce(f, Reduction::GlobalAvg)?,
        ])?)?;
        Ok(sigmoid(&self.agg.forward(&self.se.forward(&grid)?)?))
    }

    /// `[B,C,H,W]` in (0,1); channel `j` depends only on channel `j` of each input.
    pub fn pixel_mask(&self, f_hat: &Tensor<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("seam_pixel_mask", f_hat, f)?;
        Ok(sigmoid(&self.pix.forward(&interleave_channels(f_hat, f)?)?))
    }

    pub fn gate(&self, f_hat: &Tensor<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
        sqrt(&mul(&self.pixel_mask(f_hat, f)?, &self.channel_mask(f_hat, f)?)?)
    }

    pub fn saliency(&self) -> Tensor<T> {
        sigmoid(self.kappa.tensor())
    }

    /// `(gate + σ(kappa)) · F̂ + F`.
    pub fn fuse(&self, f_hat: &Tensor<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
        let gain = add(&self.gate(f_hat, f)?, &self.saliency())?;
        add(&mul(&gain, f_hat)?, f)
    }
}

impl<T: Element> Module<T> for Seam<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.se.visit_params(f);
        self.agg.visit_params(f);
        self.pix.visit_params(f);
        f(&self.kappa);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.se.visit_params_mut(f);
        self.agg.visit_params_mut(f);
        self.pix.visit_params_mut(f);
        f(&mut self.kappa);
    }
}

pub fn seam_fuse<T: Element>(f_hat: &Tensor<T>, f: &Tensor<T>, p: &Seam<T>) -> Result<Tensor<T>> {
    p.fuse(f_hat, f)
}

pub fn seam_param_count(channels: usize, reduction: usize) -> usize {
    let hidden = crate::nn::hidden_width(channels, reduction);
    let se = channels * hidden + hidden + hidden * channels + channels;
    let agg = 4 * channels + channels;
    let pix = channels * 2 * 49 + channels;
    se + agg + pix + 1
}
