use bafpn::nn::{conv2d, deform_conv2d, ConvSpec, OffsetField};
use bafpn::reference::{naive_conv2d, naive_deform_conv2d, naive_space_to_depth, DenseArray};
use bafpn::spam::space_to_depth;
use bafpn::tensor::ops::depth_to_space;
use bafpn::Tensor;
use proptest::prelude::*;

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

fn dense(t: &Tensor<f64>) -> DenseArray {
    DenseArray::new(t.shape(), t.to_vec()).unwrap()
}

fn max_abs_dev(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
struct ConvCase {
    batch: usize,
    groups: usize,
    cin_per_group: usize,
    cout_per_group: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    bias: bool,
}

impl ConvCase {
    fn spec(&self) -> ConvSpec {
        ConvSpec::new(self.groups * self.cin_per_group, self.groups * self.cout_per_group, self.k)
            .groups(self.groups)
            .stride(self.stride)
            .padding(self.pad)
            .bias(self.bias)
    }
}

fn conv_case() -> impl Strategy<Value = ConvCase> {
    (
        1usize..=2,
        prop::sample::select(vec![1usize, 2, 4]),
        1usize..=2,
        1usize..=2,
        1usize..=9,
        1usize..=9,
        1usize..=3,
        prop::sample::select(vec![1usize, 2]),
        prop::sample::select(vec![0usize, 1, 3]),
        any::<bool>(),
    )
        .prop_map(|(batch, groups, cin_per_group, cout_per_group, h, w, k, stride, pad, bias)| ConvCase {
            batch,
            groups,
            cin_per_group,
            cout_per_group,
            h,
            w,
            k,
            stride,
            pad,
            bias,
        })
        .prop_filter("kernel fits the padded input", |c| c.k <= c.h + 2 * c.pad && c.k <= c.w + 2 * c.pad)
}

fn conv_inputs() -> impl Strategy<Value = (ConvCase, Vec<f64>, Vec<f64>, Vec<f64>)> {
    conv_case().prop_flat_map(|c| {
        let cin = c.groups * c.cin_per_group;
        let cout = c.groups * c.cout_per_group;
        let nx = c.batch * cin * c.h * c.w;
        let nw = cout * c.cin_per_group * c.k * c.k;
        (Just(c), values(nx), values(nw), values(cout))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn conv2d_matches_naive((c, xv, wv, bv) in conv_inputs()) {
        let spec = c.spec();
        let cin = c.groups * c.cin_per_group;
        let x = Tensor::from_vec(xv, &[c.batch, cin, c.h, c.w]).unwrap();
        let w = Tensor::from_vec(wv, &spec.weight_shape()).unwrap();
        let b = Tensor::from_vec(bv.clone(), &[spec.out_channels]).unwrap();
        let fast = conv2d(&x, &spec, &w, c.bias.then_some(&b)).unwrap();
        let slow = naive_conv2d(
            &dense(&x),
            &dense(&w),
            c.bias.then_some(bv.as_slice()),
            c.stride,
            c.pad,
            c.groups,
        )
        .unwrap();
        prop_assert_eq!(fast.shape(), slow.shape.as_slice());
        prop_assert!(max_abs_dev(fast.data(), &slow.data) <= 1e-12);
    }
}

fn dcn_inputs() -> impl Strategy<Value = ([usize; 5], Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=2, 1usize..=4, 1usize..=4, 1usize..=7, 1usize..=7).prop_flat_map(|(n, c, oc, h, w)| {
        let p = n * h * w;
        (
            Just([n, c, oc, h, w]),
            values(n * c * h * w),
            values(oc * c * 9),
            values(oc),
            prop::collection::vec(-3.0f64..3.0, 18 * p),
            prop::collection::vec(0.0f64..1.0, 9 * p),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deform_conv2d_matches_naive(([n, c, oc, h, w], xv, wv, bv, ov, mv) in dcn_inputs()) {
        let x = Tensor::from_vec(xv, &[n, c, h, w]).unwrap();
        let wt = Tensor::from_vec(wv, &[oc, c, 3, 3]).unwrap();
        let b = Tensor::from_vec(bv, &[oc]).unwrap();
        let field = OffsetField {
            offsets: Tensor::from_vec(ov, &[n, 18, h, w]).unwrap(),
            masks: Tensor::from_vec(mv, &[n, 9, h, w]).unwrap(),
        };
        let fast = deform_conv2d(&x, &wt, &b, &field).unwrap();
        let slow = naive_deform_conv2d(
            &dense(&x),
            &dense(&wt),
            b.data(),
            &dense(&field.offsets),
            &dense(&field.masks),
        )
        .unwrap();
        prop_assert_eq!(fast.shape(), slow.shape.as_slice());
        prop_assert!(max_abs_dev(fast.data(), &slow.data) <= 1e-12);
    }

    #[test]
    fn deform_with_zero_offsets_is_a_padded_conv(([n, c, oc, h, w], xv, wv, bv, _o, _m) in dcn_inputs()) {
        let x = Tensor::from_vec(xv, &[n, c, h, w]).unwrap();
        let wt = Tensor::from_vec(wv, &[oc, c, 3, 3]).unwrap();
        let b = Tensor::from_vec(bv, &[oc]).unwrap();
        let field = OffsetField {
            offsets: Tensor::zeros(&[n, 18, h, w]).unwrap(),
            masks: Tensor::ones(&[n, 9, h, w]).unwrap(),
        };
        let deformed = deform_conv2d(&x, &wt, &b, &field).unwrap();
        let plain = conv2d(&x, &ConvSpec::new(c, oc, 3).padding(1), &wt, Some(&b)).unwrap();
        prop_assert!(max_abs_dev(deformed.data(), plain.data()) <= 1e-10);
    }

    #[test]
    fn uniform_integer_offsets_shift_the_interior(
        dy in -2i32..=2,
        dx in -2i32..=2,
        xv in values(2 * 9 * 9),
    ) {
        let (h, w) = (9usize, 9usize);
        let x = Tensor::from_vec(xv, &[1, 2, h, w]).unwrap();
        let mut wv = vec![0.0; 2 * 2 * 9];
        wv[4] = 1.0;
        wv[(2 + 1) * 9 + 4] = 1.0;
        let wt = Tensor::from_vec(wv, &[2, 2, 3, 3]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        let mut off = vec![0.0; 18 * h * w];
        for k in 0..9 {
            off[2 * k * h * w..][..h * w].fill(f64::from(dy));
            off[(2 * k + 1) * h * w..][..h * w].fill(f64::from(dx));
        }
        let field = OffsetField {
            offsets: Tensor::from_vec(off, &[1, 18, h, w]).unwrap(),
            masks: Tensor::ones(&[1, 9, h, w]).unwrap(),
        };
        let y = deform_conv2d(&x, &wt, &b, &field).unwrap();
        for ch in 0..2 {
            for i in 2..h - 2 {
                for j in 2..w - 2 {
                    let src = (i as i32 + dy) as usize * w + (j as i32 + dx) as usize;
                    let got = y.data()[ch * h * w + i * w + j];
                    prop_assert!((got - x.data()[ch * h * w + src]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn space_to_depth_is_a_bitwise_permutation(
        (shape, xv) in (1usize..=2, 1usize..=4, 1usize..=4, 1usize..=4)
            .prop_flat_map(|(n, c, h2, w2)| {
                let shape = [n, c, 2 * h2, 2 * w2];
                (Just(shape), values(shape.iter().product()))
            })
    ) {
        let x = Tensor::from_vec(xv.clone(), &shape).unwrap();
        let s = space_to_depth(&x).unwrap();
        let oracle = naive_space_to_depth(&dense(&x)).unwrap();
        prop_assert_eq!(s.data(), oracle.data.as_slice());

        let mut seen: Vec<u64> = s.data().iter().map(|v| v.to_bits()).collect();
        let mut orig: Vec<u64> = xv.iter().map(|v| v.to_bits()).collect();
        seen.sort_unstable();
        orig.sort_unstable();
        prop_assert_eq!(seen, orig);

        let back = depth_to_space(&s).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }
}

#[test]
fn space_to_depth_on_an_enumerated_plane() {
    let x = Tensor::from_vec((0..16).map(f64::from).collect(), &[1, 1, 4, 4]).unwrap();
    let s = space_to_depth(&x).unwrap();
    assert_eq!(s.shape(), &[1, 4, 2, 2]);
    let expect = [
        [0.0, 2.0, 8.0, 10.0],
        [1.0, 3.0, 9.0, 11.0],
        [4.0, 6.0, 12.0, 14.0],
        [5.0, 7.0, 13.0, 15.0],
    ];
    for (block, want) in expect.iter().enumerate() {
        assert_eq!(&s.data()[block * 4..][..4], want, "phase {block}");
    }
}

#[test]
fn space_to_depth_on_two_enumerated_channels() {
    let x = Tensor::from_vec((0..32).map(f64::from).collect(), &[1, 2, 4, 4]).unwrap();
    let s = space_to_depth(&x).unwrap();
    assert_eq!(&s.data()[4..8], &[16.0, 18.0, 24.0, 26.0]);
    assert_eq!(&s.data()[3 * 8 + 4..][..4], &[21.0, 23.0, 29.0, 31.0]);
}
