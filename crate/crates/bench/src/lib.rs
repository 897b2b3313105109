//! Deterministic fixtures for the criterion benchmarks under `benches/`.

use bafpn::nn::{ConvSpec, OffsetField};
use bafpn::pyramid::NeckConfig;
use bafpn::reference::DenseArray;
use bafpn::{Element, Tensor};

/// Smooth, sign-varying fill; cheap and reproducible without an RNG.
pub fn fill<T: Element>(shape: &[usize], phase: f64, amp: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|i| T::from_f64(amp * (i as f64 * 0.7071 + phase).sin())).collect();
    Tensor::from_vec(data, shape).expect("shape matches data")
}

pub fn dense(t: &Tensor<f64>) -> DenseArray {
    DenseArray::new(t.shape(), t.to_vec()).expect("shape matches data")
}

pub struct ConvFixture {
    pub x: Tensor<f64>,
    pub spec: ConvSpec,
    pub w: Tensor<f64>,
    pub b: Tensor<f64>,
}

/// 3×3, stride 1, padding 1 convolution over `[1, c, hw, hw]`.
pub fn conv_fixture(c: usize, hw: usize, groups: usize) -> ConvFixture {
    let spec = ConvSpec::new(c, c, 3).padding(1).groups(groups);
    ConvFixture {
        x: fill(&[1, c, hw, hw], 0.0, 1.0),
        w: fill(&spec.weight_shape(), 1.0, 0.2),
        b: fill(&[c], 2.0, 0.1),
        spec,
    }
}

pub struct DeformFixture {
    pub x: Tensor<f64>,
    pub w: Tensor<f64>,
    pub b: Tensor<f64>,
    pub field: OffsetField<f64>,
}

/// Fractional offsets within ±1.5 px and masks in (0, 1).
pub fn deform_fixture(c: usize, hw: usize) -> DeformFixture {
    let masks = fill::<f64>(&[1, 9, hw, hw], 3.0, 1.0);
    let masks = Tensor::from_vec(masks.data().iter().map(|m| 0.5 + 0.45 * m).collect(), masks.shape())
        .expect("same shape");
    DeformFixture {
        x: fill(&[1, c, hw, hw], 0.0, 1.0),
        w: fill(&[c, c, 3, 3], 1.0, 0.2),
        b: fill(&[c], 2.0, 0.1),
        field: OffsetField {
            offsets: fill(&[1, 18, hw, hw], 4.0, 1.5),
            masks,
        },
    }
}

/// Backbone-like inputs for a neck: level `i` is `base_hw / 2^i` square.
pub fn pyramid<T: Element>(cfg: &NeckConfig, batch: usize, base_hw: usize) -> Vec<Tensor<T>> {
    cfg.in_channels
        .iter()
        .enumerate()
        .map(|(i, &c)| fill(&[batch, c, base_hw >> i, base_hw >> i], i as f64, 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use bafpn::nn::{conv2d, deform_conv2d};
    use bafpn::reference::{naive_conv2d, naive_deform_conv2d};

    #[test]
    fn fixtures_agree_with_their_oracles() {
        let f = conv_fixture(4, 6, 2);
        let fast = conv2d(&f.x, &f.spec, &f.w, Some(&f.b)).unwrap();
        let slow = naive_conv2d(&dense(&f.x), &dense(&f.w), Some(f.b.data()), 1, 1, 2).unwrap();
        assert!(fast.data().iter().zip(&slow.data).all(|(a, b)| (a - b).abs() < 1e-12));

        let d = deform_fixture(3, 5);
        let fast = deform_conv2d(&d.x, &d.w, &d.b, &d.field).unwrap();
        let slow = naive_deform_conv2d(
            &dense(&d.x),
            &dense(&d.w),
            d.b.data(),
            &dense(&d.field.offsets),
            &dense(&d.field.masks),
        )
        .unwrap();
        assert!(fast.data().iter().zip(&slow.data).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn pyramid_halves_per_level() {
        let cfg = NeckConfig::new(vec![4, 8, 16]);
        let xs = pyramid::<f32>(&cfg, 2, 32);
        let shapes: Vec<_> = xs.iter().map(|x| x.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![2, 4, 32, 32], vec![2, 8, 16, 16], vec![2, 16, 8, 8]]);
    }
}
