//! Brute-force float64 references for the fast kernels.
//!
//! Nothing in here touches [`crate::tensor`] or [`crate::nn`]: every routine is
//! a direct loop translation of the defining sum, so agreement with the fast
//! path is evidence rather than tautology.

use std::fmt;

/// Forward-only row-major float64 array.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleError(pub String);

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "reference shape mismatch: {}", self.0)
    }
}

impl std::error::Error for OracleError {}

type Res<T> = std::result::Result<T, OracleError>;

impl DenseArray {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Res<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(OracleError(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(DenseArray {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        DenseArray {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    fn dims4(&self, what: &str) -> Res<[usize; 4]> {
        match self.shape[..] {
            [a, b, c, d] => Ok([a, b, c, d]),
            _ => Err(OracleError(format!("{what} must be rank 4, got {:?}", self.shape))),
        }
    }

    pub fn at4(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let [_, c, h, w] = [self.shape[0], self.shape[1], self.shape[2], self.shape[3]];
        self.data[((i * c + j) * h + k) * w + l]
    }

    fn at4_mut(&mut self, i: usize, j: usize, k: usize, l: usize) -> &mut f64 {
        let [_, c, h, w] = [self.shape[0], self.shape[1], self.shape[2], self.shape[3]];
        &mut self.data[((i * c + j) * h + k) * w + l]
    }
}

/// Grouped cross-correlation with zero padding, one output element at a time.
pub fn naive_conv2d(
    x: &DenseArray,
    w: &DenseArray,
    b: Option<&[f64]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Res<DenseArray> {
    let [n, c, h, wd] = x.dims4("x")?;
    let [oc, icg, kh, kw] = w.dims4("w")?;
    if groups == 0 || c != icg * groups || oc % groups != 0 || stride == 0 {
        return Err(OracleError(format!(
            "x {:?}, w {:?}, groups {groups}, stride {stride}",
            x.shape, w.shape
        )));
    }
    if b.is_some_and(|b| b.len() != oc) {
        return Err(OracleError("bias length".into()));
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let ocg = oc / groups;
    let mut out = DenseArray::zeros(&[n, oc, ho, wo]);
    for bi in 0..n {
        for o in 0..oc {
            let g = o / ocg;
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b[o]);
                    for ci in 0..icg {
                        for p in 0..kh {
                            for q in 0..kw {
                                let y = (i * stride + p) as isize - pad as isize;
                                let xx = (j * stride + q) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                acc += w.at4(o, ci, p, q)
                                    * x.at4(bi, g * icg + ci, y as usize, xx as usize);
                            }
                        }
                    }
                    *out.at4_mut(bi, o, i, j) = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Value of one channel plane at integer `(y, x)`, zero outside.
fn pixel(x: &DenseArray, b: usize, c: usize, y: i64, xx: i64) -> f64 {
    let (h, w) = (x.shape[2] as i64, x.shape[3] as i64);
    if y < 0 || xx < 0 || y >= h || xx >= w {
        0.0
    } else {
        x.at4(b, c, y as usize, xx as usize)
    }
}

/// Four-corner bilinear read at a real coordinate.
fn bilinear(x: &DenseArray, b: usize, c: usize, y: f64, xx: f64) -> f64 {
    let y0 = y.floor();
    let x0 = xx.floor();
    let (dy, dx) = (y - y0, xx - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    (1.0 - dy) * (1.0 - dx) * pixel(x, b, c, y0, x0)
        + (1.0 - dy) * dx * pixel(x, b, c, y0, x0 + 1)
        + dy * (1.0 - dx) * pixel(x, b, c, y0 + 1, x0)
        + dy * dx * pixel(x, b, c, y0 + 1, x0 + 1)
}

/// Modulated 3×3 deformable convolution, stride 1, pad 1, as a literal sum
/// over output pixel, output channel, input channel and kernel tap.
/// `offsets` `[B,18,H,W]` holds `(Δy, Δx)` per tap; `masks` is `[B,9,H,W]`.
pub fn naive_deform_conv2d(
    x: &DenseArray,
    w: &DenseArray,
    b: &[f64],
    offsets: &DenseArray,
    masks: &DenseArray,
) -> Res<DenseArray> {
    let [n, c, h, wd] = x.dims4("x")?;
    let [oc, ic, kh, kw] = w.dims4("w")?;
    if ic != c || kh != 3 || kw != 3 || b.len() != oc {
        return Err(OracleError(format!("w {:?} vs x {:?}", w.shape, x.shape)));
    }
    if offsets.shape != [n, 18, h, wd] || masks.shape != [n, 9, h, wd] {
        return Err(OracleError(format!(
            "offsets {:?} / masks {:?}",
            offsets.shape, masks.shape
        )));
    }
    let mut out = DenseArray::zeros(&[n, oc, h, wd]);
    for bi in 0..n {
        for o in 0..oc {
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = b[o];
                    for p in 0..3 {
                        for q in 0..3 {
                            let k = p * 3 + q;
                            let sy = i as f64 + p as f64 - 1.0 + offsets.at4(bi, 2 * k, i, j);
                            let sx = j as f64 + q as f64 - 1.0 + offsets.at4(bi, 2 * k + 1, i, j);
                            let m = masks.at4(bi, k, i, j);
                            for ci in 0..c {
                                acc += w.at4(o, ci, p, q) * bilinear(x, bi, ci, sy, sx) * m;
                            }
                        }
                    }
                    *out.at4_mut(bi, o, i, j) = acc;
                }
            }
        }
    }
    Ok(out)
}

/// `[B,C,H,W] -> [B,4C,H/2,W/2]`; channel block `2*dy + dx` holds rows
/// `dy::2` and columns `dx::2`.
pub fn naive_space_to_depth(x: &DenseArray) -> Res<DenseArray> {
    let [n, c, h, w] = x.dims4("x")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(OracleError(format!("odd spatial extent {h}x{w}")));
    }
    let mut out = DenseArray::zeros(&[n, 4 * c, h / 2, w / 2]);
    for bi in 0..n {
        for (block, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            for ci in 0..c {
                for i in 0..h / 2 {
                    for j in 0..w / 2 {
                        *out.at4_mut(bi, block * c + ci, i, j) = x.at4(bi, ci, 2 * i + dy, 2 * j + dx);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllcloseReport {
    pub pass: bool,
    pub max_abs: f64,
    pub max_rel: f64,
    /// Flat index of the worst element under the `atol + rtol*|b|` criterion.
    pub worst_index: Option<usize>,
}

/// Passes iff `|a - b| <= atol + rtol * |b|` everywhere.
pub fn assert_allclose(a: &[f64], b: &[f64], atol: f64, rtol: f64) -> Res<AllcloseReport> {
    if a.len() != b.len() {
        return Err(OracleError(format!("lengths {} vs {}", a.len(), b.len())));
    }
    let mut rep = AllcloseReport {
        pass: true,
        max_abs: 0.0,
        max_rel: 0.0,
        worst_index: None,
    };
    let mut worst_excess = f64::NEG_INFINITY;
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        let d = (x - y).abs();
        let d = if d.is_nan() { f64::INFINITY } else { d };
        rep.max_abs = rep.max_abs.max(d);
        if y != 0.0 {
            rep.max_rel = rep.max_rel.max(d / y.abs());
        } else if d > 0.0 {
            rep.max_rel = f64::INFINITY;
        }
        let excess = d - (atol + rtol * y.abs());
        if excess > 0.0 {
            rep.pass = false;
        }
        if excess > worst_excess && d > 0.0 {
            worst_excess = excess;
            rep.worst_index = Some(i);
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_1x1_copies() {
        let x = DenseArray::new(&[1, 2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let w = DenseArray::new(&[2, 2, 1, 1], vec![1., 0., 0., 1.]).unwrap();
        assert_eq!(naive_conv2d(&x, &w, None, 1, 0, 1).unwrap().data, x.data);
    }

    #[test]
    fn ones_kernel_on_one_hot_gives_block() {
        let mut x = DenseArray::zeros(&[1, 1, 5, 5]);
        x.data[2 * 5 + 2] = 1.0;
        let w = DenseArray::new(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = naive_conv2d(&x, &w, None, 1, 1, 1).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let inside = (1..=3).contains(&i) && (1..=3).contains(&j);
                assert_eq!(y.data[i * 5 + j], if inside { 1.0 } else { 0.0 });
            }
        }
    }

    fn uniform_field(h: usize, w: usize, dy: f64, dx: f64) -> (DenseArray, DenseArray) {
        let mut off = DenseArray::zeros(&[1, 18, h, w]);
        for k in 0..9 {
            for p in 0..h * w {
                off.data[2 * k * h * w + p] = dy;
                off.data[(2 * k + 1) * h * w + p] = dx;
            }
        }
        (off, DenseArray::new(&[1, 9, h, w], vec![1.0; 9 * h * w]).unwrap())
    }

    fn identity3() -> DenseArray {
        let mut w = DenseArray::zeros(&[1, 1, 3, 3]);
        w.data[4] = 1.0;
        w
    }

    #[test]
    fn deform_zero_offsets_is_conv() {
        let x = DenseArray::new(&[1, 2, 3, 4], (0..24).map(|v| (v as f64).sin()).collect()).unwrap();
        let w = DenseArray::new(&[3, 2, 3, 3], (0..54).map(|v| (v as f64 * 0.37).cos()).collect()).unwrap();
        let b = [0.1, 0.2, -0.3];
        let (off, m) = uniform_field(3, 4, 0.0, 0.0);
        let d = naive_deform_conv2d(&x, &w, &b, &off, &m).unwrap();
        let c = naive_conv2d(&x, &w, Some(&b), 1, 1, 1).unwrap();
        let r = assert_allclose(&d.data, &c.data, 1e-13, 0.0).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn deform_column_shift() {
        let x = DenseArray::new(&[1, 1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let (off, m) = uniform_field(2, 3, 0.0, 1.0);
        let y = naive_deform_conv2d(&x, &identity3(), &[0.0], &off, &m).unwrap();
        assert_eq!(y.data, vec![2., 3., 0., 5., 6., 0.]);
    }

    #[test]
    fn deform_half_pixel_on_ramp_is_midpoint() {
        // Affine signal: bilinear interpolation is exact away from the border.
        let (h, w) = (4, 6);
        let x = DenseArray::new(&[1, 1, h, w], (0..h * w).map(|v| 0.5 * (v / w) as f64 + 2.0 * (v % w) as f64).collect()).unwrap();
        let (off, m) = uniform_field(h, w, 0.0, 0.5);
        let y = naive_deform_conv2d(&x, &identity3(), &[0.0], &off, &m).unwrap();
        for i in 0..h {
            for j in 0..w - 1 {
                let expect = 0.5 * i as f64 + 2.0 * (j as f64 + 0.5);
                assert!((y.data[i * w + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn space_to_depth_cases() {
        let x = DenseArray::new(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(naive_space_to_depth(&x).unwrap().data, vec![1., 2., 3., 4.]);
        let ramp = DenseArray::new(&[1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let s = naive_space_to_depth(&ramp).unwrap();
        assert_eq!(&s.data[12..16], &[5., 7., 13., 15.]);
        assert!(naive_space_to_depth(&DenseArray::zeros(&[1, 1, 3, 2])).is_err());
    }

    #[test]
    fn allclose_examples() {
        let r = assert_allclose(&[1.0, 2.0], &[1.0, 2.0], 0.0, 0.0).unwrap();
        assert!(r.pass && r.max_abs == 0.0 && r.max_rel == 0.0);
        assert!(assert_allclose(&[1.0], &[1.0 + 1e-13], 1e-12, 0.0).unwrap().pass);
        let r = assert_allclose(&[0.0], &[1.0], 1e-12, 0.0).unwrap();
        assert!(!r.pass);
        assert_eq!(r.worst_index, Some(0));
        assert_eq!(r.max_abs, 1.0);
        assert!(assert_allclose(&[0.0], &[1.0, 2.0], 0.0, 0.0).is_err());
    }
}
