//! Resampling kernels: bilinear gather with coordinate gradients, modulated
//! deformable convolution, and 2× upsampling.

use crate::error::{Error, Result};
use crate::nn::conv::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{kink, Backward, Element, Tensor};

/// Bilinear taps at a real coordinate: `(flat index, weight, dweight/dy, dweight/dx)`
/// for each in-bounds corner. Out-of-bounds corners are dropped (zero padding).
#[derive(Debug, Clone, Copy)]
struct Taps<T> {
    n: usize,
    tap: [(usize, T, T, T); 4],
}

impl<T: Element> Taps<T> {
    #[inline]
    fn at(y: T, x: T, h: usize, w: usize) -> Self {
        let y0f = y.floor();
        let x0f = x.floor();
        let ly = y - y0f;
        let lx = x - x0f;
        let (hy, hx) = (T::one() - ly, T::one() - lx);
        let y0 = y0f.as_f64() as i64;
        let x0 = x0f.as_f64() as i64;
        let mut taps = Taps {
            n: 0,
            tap: [(0, T::zero(), T::zero(), T::zero()); 4],
        };
        let corners = [
            (y0, x0, hy * hx, -hx, -hy),
            (y0, x0 + 1, hy * lx, -lx, hy),
            (y0 + 1, x0, ly * hx, hx, -ly),
            (y0 + 1, x0 + 1, ly * lx, lx, ly),
        ];
        for (cy, cx, wt, dy, dx) in corners {
            if cy >= 0 && cx >= 0 && (cy as usize) < h && (cx as usize) < w {
                taps.tap[taps.n] = (cy as usize * w + cx as usize, wt, dy, dx);
                taps.n += 1;
            }
        }
        taps
    }

    #[inline]
    fn iter(&self) -> impl Iterator<Item = &(usize, T, T, T)> {
        self.tap[..self.n].iter()
    }

    #[inline]
    fn sample(&self, plane: &[T]) -> T {
        self.iter().map(|&(i, wt, _, _)| plane[i] * wt).sum()
    }

    /// `(d/dy, d/dx)` of the sampled value.
    #[inline]
    fn grad_coord(&self, plane: &[T]) -> (T, T) {
        self.iter().fold((T::zero(), T::zero()), |(gy, gx), &(i, _, dy, dx)| {
            (gy + plane[i] * dy, gx + plane[i] * dx)
        })
    }
}

/// Bilinear weights have slope jumps wherever a coordinate is an integer.
fn note_fractional<T: Element>(coords: &[T]) {
    kink::note(coords.iter().fold(f64::INFINITY, |m, v| m.min(kink::to_integer(v.as_f64()))));
}

// ── bilinear_sample ──────────────────────────────────────────────────

struct BilinearSampleOp;

impl<T: Element> Backward<T> for BilinearSampleOp {
    fn name(&self) -> &'static str {
        "bilinear_sample"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, ys, xs) = (&inputs[0], &inputs[1], &inputs[2]);
        let [b, c, h, w] = *x.shape() else { unreachable!() };
        let [_, _, ho, wo] = *ys.shape() else { unreachable!() };
        let p = ho * wo;
        let mut gx = x.requires_grad().then(|| vec![T::zero(); x.numel()]);
        let want_coord = ys.requires_grad() || xs.requires_grad();
        let mut gy = vec![T::zero(); if want_coord { ys.numel() } else { 0 }];
        let mut gxc = vec![T::zero(); if want_coord { xs.numel() } else { 0 }];
        for n in 0..b {
            for q in 0..p {
                let taps = Taps::at(ys.data()[n * p + q], xs.data()[n * p + q], h, w);
                for ch in 0..c {
                    let g = grad[(n * c + ch) * p + q];
                    let base = (n * c + ch) * h * w;
                    if let Some(gx) = gx.as_mut() {
                        for &(i, wt, _, _) in taps.iter() {
                            gx[base + i] += g * wt;
                        }
                    }
                    if want_coord {
                        let (dy, dx) = taps.grad_coord(&x.data()[base..base + h * w]);
                        gy[n * p + q] += g * dy;
                        gxc[n * p + q] += g * dx;
                    }
                }
            }
        }
        vec![
            gx,
            ys.requires_grad().then_some(gy),
            xs.requires_grad().then_some(gxc),
        ]
    }
}

/// Samples `x: [B,C,H,W]` at real-valued `(y, x)` coordinates given as
/// `[B,1,Ho,Wo]` grids. Samples outside the image read zeros.
pub fn bilinear_sample<T: Element>(
    x: &Tensor<T>,
    y_coord: &Tensor<T>,
    x_coord: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4("bilinear_sample")?;
    let [by, cy, ho, wo] = y_coord.dims4("bilinear_sample")?;
    if by != b || cy != 1 || x_coord.shape() != y_coord.shape() {
        return Err(Error::shape(
            "bilinear_sample",
            format!(
                "coordinate grids {:?}/{:?} must both be [{b},1,Ho,Wo]",
                y_coord.shape(),
                x_coord.shape()
            ),
        ));
    }
    if kink::active() {
        if y_coord.requires_grad() || x_coord.requires_grad() {
            note_fractional(y_coord.data());
            note_fractional(x_coord.data());
        }
        kink::record_cells(y_coord.data().iter().chain(x_coord.data()).map(|v| v.as_f64()));
    }
    let p = ho * wo;
    let mut out = vec![T::zero(); b * c * p];
    for n in 0..b {
        for q in 0..p {
            let taps = Taps::at(y_coord.data()[n * p + q], x_coord.data()[n * p + q], h, w);
            for ch in 0..c {
                let base = (n * c + ch) * h * w;
                out[(n * c + ch) * p + q] = taps.sample(&x.data()[base..base + h * w]);
            }
        }
    }
    Ok(Tensor::from_op(
        out,
        vec![b, c, ho, wo],
        vec![x.clone(), y_coord.clone(), x_coord.clone()],
        BilinearSampleOp,
    ))
}

// ── modulated deformable convolution ────────────────────────────────

pub const DCN_KERNEL: usize = 3;
const TAPS: usize = DCN_KERNEL * DCN_KERNEL;

/// Per-pixel sampling displacements and modulation for a 3×3 deformable conv.
///
/// `offsets` is `[B, 18, H, W]`: for kernel tap `k` (row-major over the 3×3
/// window) channel `2k` holds Δy and `2k+1` holds Δx, in pixels. `masks` is
/// `[B, 9, H, W]` with values already squashed into (0, 1).
#[derive(Debug, Clone)]
pub struct OffsetField<T: Element> {
    pub offsets: Tensor<T>,
    pub masks: Tensor<T>,
}

struct DeformGeom {
    c: usize,
    h: usize,
    w: usize,
}

impl DeformGeom {
    /// Calls `f(tap, pixel, taps)` for every (kernel tap, output pixel).
    #[inline]
    fn for_each_tap<T: Element>(
        &self,
        offsets: &[T],
        mut f: impl FnMut(usize, usize, &Taps<T>),
    ) {
        let p = self.h * self.w;
        let half = (DCN_KERNEL / 2) as f64;
        for k in 0..TAPS {
            let (ki, kj) = ((k / DCN_KERNEL) as f64 - half, (k % DCN_KERNEL) as f64 - half);
            let dy = &offsets[2 * k * p..][..p];
            let dx = &offsets[(2 * k + 1) * p..][..p];
            for i in 0..self.h {
                for j in 0..self.w {
                    let q = i * self.w + j;
                    let sy = T::from_f64(i as f64 + ki) + dy[q];
                    let sx = T::from_f64(j as f64 + kj) + dx[q];
                    f(k, q, &Taps::at(sy, sx, self.h, self.w));
                }
            }
        }
    }

    /// Modulated sampling columns `[c*9, h*w]` for one image.
    fn columns<T: Element>(&self, img: &[T], offsets: &[T], masks: &[T], cols: &mut [T]) {
        let p = self.h * self.w;
        let plane = self.h * self.w;
        self.for_each_tap(offsets, |k, q, taps| {
            let m = masks[k * p + q];
            for ch in 0..self.c {
                cols[(ch * TAPS + k) * p + q] = m * taps.sample(&img[ch * plane..][..plane]);
            }
        });
    }
}

struct DeformConvOp {
    batch: usize,
    c_out: usize,
    geom: DeformGeom,
}

impl<T: Element> Backward<T> for DeformConvOp {
    fn name(&self) -> &'static str {
        "deform_conv2d"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, w, b, off, mask) = (&inputs[0], &inputs[1], &inputs[2], &inputs[3], &inputs[4]);
        let g = &self.geom;
        let p = g.h * g.w;
        let kk = g.c * TAPS;
        let img_len = g.c * p;

        let mut gx = x.requires_grad().then(|| vec![T::zero(); x.numel()]);
        let mut gw = w.requires_grad().then(|| vec![T::zero(); w.numel()]);
        let want_field = off.requires_grad() || mask.requires_grad();
        let mut goff = vec![T::zero(); if want_field { off.numel() } else { 0 }];
        let mut gmask = vec![T::zero(); if want_field { mask.numel() } else { 0 }];
        let mut cols = vec![T::zero(); kk * p];
        let mut dcols = vec![T::zero(); kk * p];

        for n in 0..self.batch {
            let img = &x.data()[n * img_len..][..img_len];
            let offs = &off.data()[n * 2 * TAPS * p..][..2 * TAPS * p];
            let msk = &mask.data()[n * TAPS * p..][..TAPS * p];
            let dout = &grad[n * self.c_out * p..][..self.c_out * p];
            if let Some(gw) = gw.as_mut() {
                g.columns(img, offs, msk, &mut cols);
                gemm_nt(self.c_out, kk, p, dout, &cols, gw);
            }
            if gx.is_none() && !want_field {
                continue;
            }
            dcols.fill(T::zero());
            gemm_tn(kk, p, self.c_out, w.data(), dout, &mut dcols);
            let mut gx_img = gx.as_mut().map(|v| &mut v[n * img_len..][..img_len]);
            let goff_n: &mut [T] = if want_field { &mut goff[n * 2 * TAPS * p..][..2 * TAPS * p] } else { &mut [] };
            let gmask_n: &mut [T] = if want_field { &mut gmask[n * TAPS * p..][..TAPS * p] } else { &mut [] };
            g.for_each_tap(offs, |k, q, taps| {
                let m = msk[k * p + q];
                let (mut sy, mut sx, mut sm) = (T::zero(), T::zero(), T::zero());
                for ch in 0..g.c {
                    let d = dcols[(ch * TAPS + k) * p + q];
                    if d == T::zero() {
                        continue;
                    }
                    let plane = &img[ch * p..][..p];
                    if let Some(gxi) = gx_img.as_mut() {
                        let dst = &mut gxi[ch * p..][..p];
                        for &(i, wt, _, _) in taps.iter() {
                            dst[i] += d * m * wt;
                        }
                    }
                    if want_field {
                        sm += d * taps.sample(plane);
                        let (dy, dx) = taps.grad_coord(plane);
                        sy += d * dy;
                        sx += d * dx;
                    }
                }
                if want_field {
                    gmask_n[k * p + q] += sm;
                    goff_n[2 * k * p + q] += m * sy;
                    goff_n[(2 * k + 1) * p + q] += m * sx;
                }
            });
        }

        let gb = b.requires_grad().then(|| {
            let mut gb = vec![T::zero(); self.c_out];
            for n in 0..self.batch {
                for (oc, v) in gb.iter_mut().enumerate() {
                    *v += grad[(n * self.c_out + oc) * p..][..p].iter().copied().sum();
                }
            }
            gb
        });
        vec![
            gx,
            gw,
            gb,
            off.requires_grad().then_some(goff),
            mask.requires_grad().then_some(gmask),
        ]
    }
}

/// Modulated 3×3 deformable convolution, stride 1, padding 1:
/// `out(i,j) = b + Σ_k w_k · m_k(i,j) · x(i + p_k + Δy_k(i,j), j + q_k + Δx_k(i,j))`
/// with bilinear reads that are zero outside the image.
pub fn deform_conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    field: &OffsetField<T>,
) -> Result<Tensor<T>> {
    let [batch, c, h, wd] = x.dims4("deform_conv2d")?;
    let [c_out, c_w, kh, kw] = w.dims4("deform_conv2d")?;
    if kh != DCN_KERNEL || kw != DCN_KERNEL || c_w != c {
        return Err(Error::shape(
            "deform_conv2d",
            format!("weight {:?} must be [C_out, {c}, 3, 3]", w.shape()),
        ));
    }
    if b.shape() != [c_out] {
        return Err(Error::shape(
            "deform_conv2d",
            format!("bias shape {:?} != [{c_out}]", b.shape()),
        ));
    }
    if field.offsets.shape() != [batch, 2 * TAPS, h, wd] {
        return Err(Error::shape(
            "deform_conv2d",
            format!(
                "offsets {:?} must be [{batch}, {}, {h}, {wd}]",
                field.offsets.shape(),
                2 * TAPS
            ),
        ));
    }
    if field.masks.shape() != [batch, TAPS, h, wd] {
        return Err(Error::shape(
            "deform_conv2d",
            format!(
                "masks {:?} must be [{batch}, {TAPS}, {h}, {wd}]",
                field.masks.shape()
            ),
        ));
    }
    if kink::active() {
        if field.offsets.requires_grad() {
            note_fractional(field.offsets.data());
        }
        kink::record_cells(field.offsets.data().iter().map(|v| v.as_f64()));
    }
    let geom = DeformGeom { c, h, w: wd };
    let p = h * wd;
    let kk = c * TAPS;
    let mut out = vec![T::zero(); batch * c_out * p];
    let mut cols = vec![T::zero(); kk * p];
    for n in 0..batch {
        geom.columns(
            &x.data()[n * c * p..][..c * p],
            &field.offsets.data()[n * 2 * TAPS * p..][..2 * TAPS * p],
            &field.masks.data()[n * TAPS * p..][..TAPS * p],
            &mut cols,
        );
        let dst = &mut out[n * c_out * p..][..c_out * p];
        gemm_nn(c_out, p, kk, w.data(), &cols, dst);
        for (oc, &bv) in b.data().iter().enumerate() {
            dst[oc * p..][..p].iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(Tensor::from_op(
        out,
        vec![batch, c_out, h, wd],
        vec![
            x.clone(),
            w.clone(),
            b.clone(),
            field.offsets.clone(),
            field.masks.clone(),
        ],
        DeformConvOp {
            batch,
            c_out,
            geom,
        },
    ))
}

// ── 2× upsampling ────────────────────────────────────────────────────

struct NearestUpOp;

impl<T: Element> Backward<T> for NearestUpOp {
    fn name(&self) -> &'static str {
        "nearest_upsample2x"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let [b, c, h, w] = *inputs[0].shape() else { unreachable!() };
        let w2 = 2 * w;
        let mut g = vec![T::zero(); b * c * h * w];
        for bc in 0..b * c {
            let src = &grad[bc * 4 * h * w..][..4 * h * w];
            for i in 0..h {
                for j in 0..w {
                    let at = |di: usize, dj: usize| src[(2 * i + di) * w2 + 2 * j + dj];
                    g[bc * h * w + i * w + j] = at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1);
                }
            }
        }
        vec![Some(g)]
    }
}

/// Replicates each pixel into a 2×2 block.
pub fn nearest_upsample2x<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4("nearest_upsample2x")?;
    let w2 = 2 * w;
    let mut out = Vec::with_capacity(b * c * 4 * h * w);
    for bc in 0..b * c {
        for i in 0..h {
            let row = &x.data()[bc * h * w + i * w..][..w];
            for _ in 0..2 {
                out.extend(row.iter().flat_map(|&v| [v, v]));
            }
        }
    }
    debug_assert_eq!(out.len(), b * c * 2 * h * w2);
    Ok(Tensor::from_op(
        out,
        vec![b, c, 2 * h, w2],
        vec![x.clone()],
        NearestUpOp,
    ))
}

/// Source taps of output index `o` when doubling an axis of length `n`
/// (half-pixel centers, edge-clamped): `(lo, hi, weight of hi)`.
#[inline]
fn bilinear_axis(o: usize, n: usize) -> (usize, usize, f64) {
    let s = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let lo = (s.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, s - lo as f64)
}

struct BilinearUpOp;

impl<T: Element> Backward<T> for BilinearUpOp {
    fn name(&self) -> &'static str {
        "bilinear_upsample2x"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let [b, c, h, w] = *inputs[0].shape() else { unreachable!() };
        let (h2, w2) = (2 * h, 2 * w);
        let mut g = vec![T::zero(); b * c * h * w];
        for bc in 0..b * c {
            let dst = &mut g[bc * h * w..][..h * w];
            for oi in 0..h2 {
                let (y0, y1, ly) = bilinear_axis(oi, h);
                let (ly, hy) = (T::from_f64(ly), T::from_f64(1.0 - ly));
                for oj in 0..w2 {
                    let (x0, x1, lx) = bilinear_axis(oj, w);
                    let (lx, hx) = (T::from_f64(lx), T::from_f64(1.0 - lx));
                    let gv = grad[bc * h2 * w2 + oi * w2 + oj];
                    dst[y0 * w + x0] += gv * hy * hx;
                    dst[y0 * w + x1] += gv * hy * lx;
                    dst[y1 * w + x0] += gv * ly * hx;
                    dst[y1 * w + x1] += gv * ly * lx;
                }
            }
        }
        vec![Some(g)]
    }
}

/// 2× bilinear upsampling with half-pixel centers and clamped edges.
pub fn bilinear_upsample2x<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4("bilinear_upsample2x")?;
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); b * c * h2 * w2];
    for bc in 0..b * c {
        let src = &x.data()[bc * h * w..][..h * w];
        for oi in 0..h2 {
            let (y0, y1, ly) = bilinear_axis(oi, h);
            let (ly, hy) = (T::from_f64(ly), T::from_f64(1.0 - ly));
            for oj in 0..w2 {
                let (x0, x1, lx) = bilinear_axis(oj, w);
                let (lx, hx) = (T::from_f64(lx), T::from_f64(1.0 - lx));
                out[bc * h2 * w2 + oi * w2 + oj] = hy * (hx * src[y0 * w + x0] + lx * src[y0 * w + x1])
                    + ly * (hx * src[y1 * w + x0] + lx * src[y1 * w + x1]);
            }
        }
    }
    Ok(Tensor::from_op(
        out,
        vec![b, c, h2, w2],
        vec![x.clone()],
        BilinearUpOp,
    ))
}
