use bafpn::galm::Galm;
use bafpn::nn::{bilinear_sample, conv2d, shared_group_conv1x1, ConvSpec};
use bafpn::param::randomize_params;
use bafpn::pyramid::{Neck, NeckConfig, Variant};
use bafpn::seam::Seam;
use bafpn::tensor::ops::{add, concat_channels, mul, narrow_channels, scale, sum_all};
use bafpn::{backward, DType, Module, ParamFactory, Tensor};
use proptest::prelude::*;

fn tensor(shape: [usize; 4]) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-3.0f64..3.0, shape.iter().product::<usize>())
        .prop_map(move |v| Tensor::from_vec(v, &shape).unwrap())
}

fn shape4(max_c: usize, max_hw: usize) -> impl Strategy<Value = [usize; 4]> {
    (1usize..=2, 1..=max_c, 1..=max_hw, 1..=max_hw).prop_map(|(b, c, h, w)| [b, c, h, w])
}

/// Reorders channel blocks of width `block` according to `perm`.
fn permute_blocks(x: &Tensor<f64>, block: usize, perm: &[usize]) -> Tensor<f64> {
    let parts: Vec<_> = perm.iter().map(|&j| narrow_channels(x, j * block, block).unwrap()).collect();
    concat_channels(&parts).unwrap()
}

fn spatial_permute(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let [b, c, h, w] = x.dims4("permute").unwrap();
    let p = h * w;
    let mut out = vec![0.0; x.numel()];
    for plane in 0..b * c {
        for (dst, &src) in perm.iter().enumerate() {
            out[plane * p + dst] = x.data()[plane * p + src];
        }
    }
    Tensor::from_vec(out, &[b, c, h, w]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fan_out_scales_the_gradient(x in shape4(3, 4).prop_flat_map(tensor), k in 1usize..5) {
        let v = x.to_variable();
        let once = backward(&sum_all(&mul(&v, &v).unwrap())).unwrap();
        let mut acc = sum_all(&mul(&v, &v).unwrap());
        for _ in 1..k {
            acc = add(&acc, &sum_all(&mul(&v, &v).unwrap())).unwrap();
        }
        let many = backward(&acc).unwrap();
        for (a, b) in many.get(&v).unwrap().iter().zip(once.get(&v).unwrap()) {
            prop_assert!((a - k as f64 * b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn backward_is_bitwise_deterministic(x in tensor([2, 4, 6, 6]), seed in any::<u64>()) {
        let mut m = Seam::<f64>::new(&mut ParamFactory::new(seed), "seam", 4, 16);
        randomize_params(&mut m, seed, 0.5);
        let run = || {
            let v = x.to_variable();
            let out = m.fuse(&scale(&v, 0.5), &v).unwrap();
            let g = backward(&sum_all(&mul(&out, &out).unwrap())).unwrap();
            let mut bits: Vec<u64> = g.get(&v).unwrap().iter().map(|f| f.to_bits()).collect();
            for p in m.params() {
                bits.extend(g.get(p.tensor()).unwrap().iter().map(|f| f.to_bits()));
            }
            bits
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn shared_group_conv_is_one_kernel_per_group(
        (g, x) in (1usize..=4, 1usize..=3).prop_flat_map(|(g, per)| (Just(g), tensor([2, g * per, 3, 4]))),
        c_out in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let per = x.shape()[1] / g;
        let mut f = ParamFactory::new(seed);
        let w: Tensor<f64> = f.conv_weight::<f64>("w", [c_out, per, 1, 1]).tensor().detach();
        let b = Tensor::from_vec((0..c_out).map(|i| i as f64 - 0.5).collect(), &[c_out]).unwrap();
        let fused = shared_group_conv1x1(&x, g, &w, Some(&b)).unwrap();
        let spec = ConvSpec::new(per, c_out, 1);
        let parts: Vec<_> = (0..g)
            .map(|j| conv2d(&narrow_channels(&x, j * per, per).unwrap(), &spec, &w, Some(&b)).unwrap())
            .collect();
        prop_assert_eq!(fused.to_vec(), concat_channels(&parts).unwrap().to_vec());
    }

    #[test]
    fn bilinear_sample_at_integer_points_is_a_gather(
        x in tensor([1, 2, 5, 6]),
        pts in prop::collection::vec((0usize..5, 0usize..6), 12),
    ) {
        let ys = Tensor::from_vec(pts.iter().map(|p| p.0 as f64).collect(), &[1, 1, 3, 4]).unwrap();
        let xs = Tensor::from_vec(pts.iter().map(|p| p.1 as f64).collect(), &[1, 1, 3, 4]).unwrap();
        let s = bilinear_sample(&x, &ys, &xs).unwrap();
        for c in 0..2 {
            for (q, &(i, j)) in pts.iter().enumerate() {
                prop_assert_eq!(s.data()[c * 12 + q], x.data()[c * 30 + i * 6 + j]);
            }
        }
    }

    #[test]
    fn galm_commutes_with_spatial_permutations(
        x in tensor([1, 8, 3, 3]),
        perm in Just((0..9).collect::<Vec<usize>>()).prop_shuffle(),
        seed in any::<u64>(),
    ) {
        let mut m = Galm::<f64>::new(&mut ParamFactory::new(seed), "galm", 8, 4, 4).unwrap();
        randomize_params(&mut m, seed ^ 1, 0.5);
        let a = spatial_permute(&m.forward(&x).unwrap(), &perm);
        let b = m.forward(&spatial_permute(&x, &perm)).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn galm_shares_its_kernel_across_groups(
        x in tensor([1, 8, 2, 3]),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        seed in any::<u64>(),
    ) {
        let (g, c_out) = (4, 3);
        let mut m = Galm::<f64>::new(&mut ParamFactory::new(seed), "galm", 8, c_out, g).unwrap();
        randomize_params(&mut m, seed ^ 2, 0.5);
        let w = m.shared_w.tensor().detach();
        let hat = shared_group_conv1x1(&x, g, &w, Some(m.shared_b.tensor())).unwrap();
        let hat_perm = shared_group_conv1x1(&permute_blocks(&x, 2, &perm), g, &w, Some(m.shared_b.tensor())).unwrap();
        prop_assert_eq!(permute_blocks(&hat, c_out, &perm).to_vec(), hat_perm.to_vec());

        let mix = m.mix_w.tensor().to_vec();
        let symmetric: Vec<f64> = (0..mix.len()).map(|i| {
            let (s, t) = (i / (g * c_out), i % c_out);
            mix[s * g * c_out + t]
        }).collect();
        m.mix_w.set_data(symmetric).unwrap();
        let y = m.forward(&x).unwrap();
        let y_perm = m.forward(&permute_blocks(&x, 2, &perm)).unwrap();
        for (a, b) in y.data().iter().zip(y_perm.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn fresh_seam_is_plain_addition(
        (a, b) in shape4(6, 5).prop_flat_map(|s| (tensor(s), tensor(s))),
        seed in any::<u64>(),
    ) {
        let m = Seam::<f64>::new(&mut ParamFactory::new(seed), "seam", a.shape()[1], 16);
        prop_assert_eq!(m.fuse(&a, &b).unwrap().to_vec(), add(&a, &b).unwrap().to_vec());
    }

    #[test]
    fn seam_gain_stays_in_open_interval(
        (a, b) in (1usize..=4).prop_flat_map(|c| (tensor([1, c, 4, 4]), tensor([1, c, 4, 4]))),
        seed in any::<u64>(),
    ) {
        let mut m = Seam::<f64>::new(&mut ParamFactory::new(seed), "seam", a.shape()[1], 16);
        randomize_params(&mut m, seed, 1.0);
        let k = m.saliency().item().unwrap();
        for g in m.gate(&a, &b).unwrap().data() {
            prop_assert!(*g > 0.0 && *g < 1.0);
            prop_assert!(g + k > 0.0 && g + k < 2.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn neck_forward_is_pure(seed in any::<u64>(), variant in prop::sample::select(Variant::ALL.to_vec())) {
        let cfg = NeckConfig {
            out_channels: 4,
            galm_groups: 2,
            variant,
            dtype: DType::Float64,
            seed,
            ..NeckConfig::new(vec![4, 6, 8])
        };
        let neck = Neck::<f64>::build(&cfg).unwrap();
        let xs: Vec<Tensor<f64>> = cfg
            .in_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let s = 8 >> i;
                Tensor::from_vec((0..c * s * s).map(|k| (k as f64 * 0.61 + seed as f64).cos()).collect(), &[1, c, s, s])
                    .unwrap()
            })
            .collect();
        let a = neck.forward(&xs).unwrap();
        let b = neck.forward(&xs).unwrap();
        let rebuilt = Neck::<f64>::build(&cfg).unwrap().forward(&xs).unwrap();
        for ((x, y), z) in a.iter().zip(&b).zip(&rebuilt) {
            prop_assert_eq!(x.data(), y.data());
            prop_assert_eq!(x.data(), z.data());
        }
    }

    #[test]
    fn both_bafpn_orders_have_equal_parameter_counts(
        c_out in 1usize..=8,
        widths in prop::collection::vec(1usize..=4, 2..=4),
    ) {
        let in_channels: Vec<usize> = widths.iter().map(|w| 2 * w).collect();
        let base = NeckConfig { out_channels: c_out, galm_groups: 2, ..NeckConfig::new(in_channels) };
        let a = Neck::<f32>::build(&base).unwrap();
        let b = Neck::<f32>::build(&NeckConfig { variant: Variant::BafpnR, ..base }).unwrap();
        prop_assert_eq!(a.num_params(), b.num_params());
    }
}
