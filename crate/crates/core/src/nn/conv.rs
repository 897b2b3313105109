//! Grouped 2-D cross-correlation via im2col + gemm.

use crate::error::{Error, Result};
use crate::tensor::ops::reshape;
use crate::tensor::{Backward, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_channels_per_group: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square kernel, one group, with bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            out_channels,
            in_channels_per_group: in_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: 0,
            groups: 1,
            has_bias: true,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    /// Splits the current input channel count into `groups`.
    pub fn groups(mut self, groups: usize) -> Self {
        let total = self.in_channels_per_group * self.groups;
        self.groups = groups;
        self.in_channels_per_group = total / groups.max(1);
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels_per_group * self.groups
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels_per_group,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + if self.has_bias { self.out_channels } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::shape("conv2d", msg));
        if self.groups == 0 || self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return bad(format!("degenerate spec {self:?}"));
        }
        if self.in_channels_per_group == 0 || self.out_channels % self.groups != 0 {
            return bad(format!(
                "groups {} must divide out_channels {} and leave nonzero input channels",
                self.groups, self.out_channels
            ));
        }
        Ok(())
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel_h || wp < self.kernel_w {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "padded input {hp}x{wp} smaller than kernel {}x{}",
                    self.kernel_h, self.kernel_w
                ),
            ));
        }
        Ok((
            (hp - self.kernel_h) / self.stride + 1,
            (wp - self.kernel_w) / self.stride + 1,
        ))
    }
}

// ── gemm kernels (row-major, accumulate into c) ──────────────────────

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Element>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(c, &b)| *c += aip * b);
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt<T: Element>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let dot: T = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            c[i * n + j] += dot;
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn<T: Element>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(c, &b)| *c += api * b);
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input coordinate for output index `o` and kernel tap `k` along one axis.
    #[inline]
    fn src(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad)
    }
}

/// Columns `[c*kh*kw, ho*wo]` for a `[c, h, w]` image.
fn im2col<T: Element>(g: &Geometry, img: &[T], cols: &mut [T]) {
    let p = g.ho * g.wo;
    for ch in 0..g.c {
        let plane = &img[ch * g.h * g.w..][..g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut cols[((ch * g.kh + ki) * g.kw + kj) * p..][..p];
                for oi in 0..g.ho {
                    let dst = &mut row[oi * g.wo..][..g.wo];
                    match g.src(oi, ki).filter(|&y| y < g.h) {
                        None => dst.fill(T::zero()),
                        Some(y) => {
                            for (oj, d) in dst.iter_mut().enumerate() {
                                *d = match g.src(oj, kj).filter(|&x| x < g.w) {
                                    Some(x) => plane[y * g.w + x],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of columns back onto a `[c, h, w]` image.
fn col2im<T: Element>(g: &Geometry, cols: &[T], img: &mut [T]) {
    let p = g.ho * g.wo;
    for ch in 0..g.c {
        let plane = &mut img[ch * g.h * g.w..][..g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &cols[((ch * g.kh + ki) * g.kw + kj) * p..][..p];
                for oi in 0..g.ho {
                    let Some(y) = g.src(oi, ki).filter(|&y| y < g.h) else {
                        continue;
                    };
                    for oj in 0..g.wo {
                        if let Some(x) = g.src(oj, kj).filter(|&x| x < g.w) {
                            plane[y * g.w + x] += row[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dOp {
    spec: ConvSpec,
    geom: Geometry,
    batch: usize,
}

impl<T: Element> Backward<T> for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let g = &self.geom;
        let s = &self.spec;
        let og = s.out_channels / s.groups;
        let kk = g.c * g.kh * g.kw;
        let p = g.ho * g.wo;
        let in_img = g.c * g.h * g.w;
        let c_in = s.in_channels();

        let mut gx = x.requires_grad().then(|| vec![T::zero(); x.numel()]);
        let mut gw = w.requires_grad().then(|| vec![T::zero(); w.numel()]);
        let mut cols = vec![T::zero(); kk * p];
        let mut dcols = vec![T::zero(); kk * p];

        for n in 0..self.batch {
            for grp in 0..s.groups {
                let img = &x.data()[(n * c_in + grp * g.c) * g.h * g.w..][..in_img];
                let dout = &grad[(n * s.out_channels + grp * og) * p..][..og * p];
                let wg = &w.data()[grp * og * kk..][..og * kk];
                if let Some(gw) = gw.as_mut() {
                    let cols: &[T] = if g.is_pointwise() {
                        img
                    } else {
                        im2col(g, img, &mut cols);
                        &cols
                    };
                    gemm_nt(og, kk, p, dout, cols, &mut gw[grp * og * kk..][..og * kk]);
                }
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx[(n * c_in + grp * g.c) * g.h * g.w..][..in_img];
                    if g.is_pointwise() {
                        gemm_tn(kk, p, og, wg, dout, dst);
                    } else {
                        dcols.fill(T::zero());
                        gemm_tn(kk, p, og, wg, dout, &mut dcols);
                        col2im(g, &dcols, dst);
                    }
                }
            }
        }

        let gb = inputs.get(2).filter(|b| b.requires_grad()).map(|_| {
            let mut gb = vec![T::zero(); s.out_channels];
            for n in 0..self.batch {
                for (oc, gbv) in gb.iter_mut().enumerate() {
                    *gbv += grad[(n * s.out_channels + oc) * p..][..p].iter().copied().sum();
                }
            }
            gb
        });
        let mut out = vec![gx, gw];
        if inputs.len() > 2 {
            out.push(gb);
        }
        out
    }
}

/// Cross-correlation with zero padding. Weight `[out, in/groups, kh, kw]`,
/// optional bias `[out]`.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let [batch, c_in, h, wd] = x.dims4("conv2d")?;
    if c_in != spec.in_channels() {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input has {c_in} channels, spec expects {} ({} groups x {})",
                spec.in_channels(),
                spec.groups,
                spec.in_channels_per_group
            ),
        ));
    }
    if w.shape() != spec.weight_shape() {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight shape {:?} != expected {:?}",
                w.shape(),
                spec.weight_shape()
            ),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [spec.out_channels] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} != [{}]", b.shape(), spec.out_channels),
            ));
        }
    }
    let (ho, wo) = spec.out_hw(h, wd)?;
    let geom = Geometry {
        c: spec.in_channels_per_group,
        h,
        w: wd,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.padding,
        ho,
        wo,
    };
    let og = spec.out_channels / spec.groups;
    let kk = geom.c * geom.kh * geom.kw;
    let p = ho * wo;
    let mut out = vec![T::zero(); batch * spec.out_channels * p];
    let mut cols = vec![T::zero(); if geom.is_pointwise() { 0 } else { kk * p }];

    for n in 0..batch {
        for grp in 0..spec.groups {
            let img = &x.data()[(n * c_in + grp * geom.c) * h * wd..][..geom.c * h * wd];
            let cols: &[T] = if geom.is_pointwise() {
                img
            } else {
                im2col(&geom, img, &mut cols);
                &cols
            };
            let wg = &w.data()[grp * og * kk..][..og * kk];
            let dst = &mut out[(n * spec.out_channels + grp * og) * p..][..og * p];
            gemm_nn(og, p, kk, wg, cols, dst);
        }
        if let Some(b) = b {
            for (oc, &bv) in b.data().iter().enumerate() {
                out[(n * spec.out_channels + oc) * p..][..p]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }

    let mut inputs = vec![x.clone(), w.clone()];
    inputs.extend(b.cloned());
    Ok(Tensor::from_op(
        out,
        vec![batch, spec.out_channels, ho, wo],
        inputs,
        Conv2dOp {
            spec: *spec,
            geom,
            batch,
        },
    ))
}

/// Splits `x` into `g` contiguous channel groups, applies the same 1×1
/// convolution `w: [C_out, C_in/g, 1, 1]`, `b: [C_out]` to each, and
/// concatenates group-major: `[B, g*C_out, H, W]`.
pub fn shared_group_conv1x1<T: Element>(
    x: &Tensor<T>,
    g: usize,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let [batch, c_in, h, wd] = x.dims4("shared_group_conv1x1")?;
    if g == 0 || c_in % g != 0 {
        return Err(Error::shape(
            "shared_group_conv1x1",
            format!("{g} groups do not divide {c_in} channels"),
        ));
    }
    let [c_out, per, kh, kw] = *w.shape() else {
        return Err(Error::shape(
            "shared_group_conv1x1",
            format!("weight must be rank 4, got {:?}", w.shape()),
        ));
    };
    if per != c_in / g || kh != 1 || kw != 1 {
        return Err(Error::shape(
            "shared_group_conv1x1",
            format!("weight {:?} incompatible with {} channels per group", w.shape(), c_in / g),
        ));
    }
    // [B, g, C_in/g, H, W] is contiguous, so each group becomes its own batch item.
    let stacked = reshape(x, &[batch * g, c_in / g, h, wd])?;
    let spec = ConvSpec::new(c_in / g, c_out, 1).bias(b.is_some());
    let y = conv2d(&stacked, &spec, w, b)?;
    reshape(&y, &[batch, g * c_out, h, wd])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::{concat_channels, narrow_channels};

    fn t(data: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn pointwise_scale() {
        let y = conv2d(&t(&[3.0], &[1, 1, 1, 1]), &ConvSpec::new(1, 1, 1).bias(false), &t(&[2.0], &[1, 1, 1, 1]), None).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn identity_3x3_preserves_input() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = t(&x, &[1, 1, 4, 5]);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let y = conv2d(&x, &ConvSpec::new(1, 1, 3).padding(1).bias(false), &t(&k, &[1, 1, 3, 3]), None).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn grouped_pointwise_expansion() {
        let x = t(&[1.5, -2.0], &[1, 2, 1, 1]);
        let spec = ConvSpec::new(2, 2, 1).groups(2).bias(false);
        let y = conv2d(&x, &spec, &t(&[3.0, 0.5], &[2, 1, 1, 1]), None).unwrap();
        assert_eq!(y.data(), &[4.5, -1.0]);
    }

    #[test]
    fn output_size_with_stride() {
        let spec = ConvSpec::new(1, 1, 3).stride(2).padding(1);
        assert_eq!(spec.out_hw(7, 8).unwrap(), (4, 4));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = t(&[0.0; 3], &[1, 3, 1, 1]);
        let spec = ConvSpec::new(2, 2, 1).groups(2);
        assert!(matches!(
            conv2d(&x, &spec, &t(&[0.0; 2], &[2, 1, 1, 1]), None),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn shared_conv_examples() {
        let x = t(&[1., 2., 3., 4.], &[1, 4, 1, 1]);
        let w = t(&[0.5, 0.5], &[1, 2, 1, 1]);
        let y = shared_group_conv1x1(&x, 2, &w, None).unwrap();
        assert_eq!(y.data(), &[1.5, 3.5]);

        let pq = t(&[7., -1.], &[1, 2, 1, 1]);
        let y = shared_group_conv1x1(&pq, 2, &t(&[1.0], &[1, 1, 1, 1]), Some(&t(&[0.0], &[1]))).unwrap();
        assert_eq!(y.data(), &[7., -1.]);

        assert!(shared_group_conv1x1(&x, 3, &w, None).is_err());
    }

    #[test]
    fn shared_conv_equals_per_group_conv() {
        let x: Vec<f64> = (0..2 * 6 * 3 * 2).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let x = t(&x, &[2, 6, 3, 2]);
        let w = t(&[0.3, -1.2, 0.7, 2.0, 0.1, -0.4], &[3, 2, 1, 1]);
        let b = t(&[0.5, -0.5, 1.0], &[3]);
        let fast = shared_group_conv1x1(&x, 3, &w, Some(&b)).unwrap();
        let spec = ConvSpec::new(2, 3, 1);
        let parts: Vec<_> = (0..3)
            .map(|g| conv2d(&narrow_channels(&x, 2 * g, 2).unwrap(), &spec, &w, Some(&b)).unwrap())
            .collect();
        let slow = concat_channels(&parts).unwrap();
        assert_eq!(fast.data(), slow.data());

        let g1 = shared_group_conv1x1(&x, 1, &t(&[0.25; 6], &[1, 6, 1, 1]), None).unwrap();
        let c1 = conv2d(&x, &ConvSpec::new(6, 1, 1).bias(false), &t(&[0.25; 6], &[1, 6, 1, 1]), None).unwrap();
        assert_eq!(g1.data(), c1.data());
    }
}
