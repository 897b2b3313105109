//! Self-verification suites behind the `gradcheck` and `oracle` commands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::galm::Galm;
use crate::gradcheck::{
    finite_diff_gradcheck, gradcheck_module, kink_margin, module_kink_margin, GradCheckReport, KINK_CLEARANCE,
};
use crate::nn::{
    bilinear_sample, bilinear_upsample2x, conv2d, deform_conv2d, nearest_upsample2x, shared_group_conv1x1,
    ChannelAttention, ConvSpec, OffsetField, SpatialAttention,
};
use crate::param::{randomize_params, Module, ParamFactory};
use crate::pyramid::{Neck, NeckConfig, Upsample, Variant};
use crate::reference::{naive_conv2d, naive_deform_conv2d, naive_space_to_depth, DenseArray};
use crate::seam::Seam;
use crate::spam::{space_to_depth, Spam, Stdds};
use crate::tensor::ops::{
    add, concat_channels, depth_to_space, interleave_channels, mean_all, mse, mul, narrow_channels, reduce, relu,
    reshape, scale, sigmoid, sqrt, strided_subsample, sub, sum_all, Reduction,
};
use crate::tensor::{DType, Tensor};

/// Upper bound on redraws while looking for an evaluation point far enough
/// from every kink.
pub const MAX_DRAWS: usize = 50;

/// Smallest step for functions that are at most quadratic in every single
/// coordinate (or piecewise linear between kinks). Central differences are
/// exact for them, so a wide step only shrinks roundoff.
pub const EXACT_STEP: f64 = 1e-3;

/// Smallest step for everything else. Truncation error stays near 1e-9
/// while roundoff no longer swamps small gradient entries.
pub const CURVED_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckClass {
    /// Infinitely differentiable everywhere.
    Smooth,
    /// Differentiable except on a measure-zero set of kinks.
    Piecewise,
    /// Composite module built from piecewise-smooth ops.
    Module,
    /// Offset-predicting alignment block or the full neck.
    Block,
}

impl CheckClass {
    pub fn tolerance(self) -> f64 {
        match self {
            CheckClass::Smooth => 1e-7,
            CheckClass::Piecewise => 1e-5,
            CheckClass::Module => 1e-5,
            CheckClass::Block => 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradRow {
    pub name: String,
    pub class: CheckClass,
    pub h: f64,
    pub tol: f64,
    pub max_rel_err: f64,
    pub coords: usize,
    pub kink_margin: f64,
    pub stencil_crossings: usize,
    pub draws: usize,
    /// `(input index, flat coordinate, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub pass: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct GradSuiteOptions {
    pub seed: u64,
    pub eps: f64,
    /// Replaces every per-class tolerance when set.
    pub tol: Option<f64>,
}

impl Default for GradSuiteOptions {
    fn default() -> Self {
        GradSuiteOptions {
            seed: 0,
            eps: 1e-6,
            tol: None,
        }
    }
}

type Rng64 = ChaCha8Rng;

fn uniform(rng: &mut Rng64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape).expect("shape matches data")
}

fn u(rng: &mut Rng64, shape: &[usize]) -> Tensor<f64> {
    uniform(rng, shape, -1.0, 1.0)
}

fn probed(out: Tensor<f64>, probe: &Tensor<f64>) -> Result<Tensor<f64>> {
    mul(&out, probe)
}

struct Outcome {
    report: GradCheckReport,
    h: f64,
    draws: usize,
}

/// Draws inputs until the evaluation point clears every kink by
/// `KINK_CLEARANCE * h` and no finite-difference stencil changes a branch,
/// then reports the check of `Σ probe · f(inputs)` for a random probe.
fn check_op<D, F>(rng: &mut Rng64, h: f64, mut draw: D, f: F) -> Result<Outcome>
where
    D: FnMut(&mut Rng64) -> Vec<Tensor<f64>>,
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut draws = 0;
    loop {
        draws += 1;
        let last = draws >= MAX_DRAWS;
        let xs = draw(rng);
        if !last && kink_margin(&f, &xs)? < KINK_CLEARANCE * h {
            continue;
        }
        let shape = f(&xs)?.shape().to_vec();
        let probe = uniform(rng, &shape, -1.0, 1.0);
        let report = finite_diff_gradcheck(|v| probed(f(v)?, &probe), &xs, h)?;
        if last || report.kink_free() {
            return Ok(Outcome { report, h, draws });
        }
    }
}

fn check_module<M, D, F>(rng: &mut Rng64, h: f64, mut draw: D, f: F) -> Result<Outcome>
where
    M: Module<f64> + Clone,
    D: FnMut(&mut Rng64) -> Result<(M, Vec<Tensor<f64>>)>,
    F: Fn(&M, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut draws = 0;
    loop {
        draws += 1;
        let last = draws >= MAX_DRAWS;
        let (m, xs) = draw(rng)?;
        if !last && module_kink_margin(&m, &xs, &f)? < KINK_CLEARANCE * h {
            continue;
        }
        let shape = f(&m, &xs)?.shape().to_vec();
        let probe = uniform(rng, &shape, -1.0, 1.0);
        let report = gradcheck_module(&m, &xs, h, |m, v| probed(f(m, v)?, &probe))?;
        if last || report.kink_free() {
            return Ok(Outcome { report, h, draws });
        }
    }
}

fn randomized<M: Module<f64>>(mut m: M, rng: &mut Rng64, scale: f64) -> M {
    randomize_params(&mut m, rng.random(), scale);
    m
}

fn small_neck(variant: Variant) -> NeckConfig {
    NeckConfig {
        out_channels: 4,
        galm_groups: 2,
        attn_kernel: 3,
        attn_reduction: 16,
        variant,
        upsample: Upsample::Bilinear,
        dtype: DType::Float64,
        ..NeckConfig::new(vec![4, 6])
    }
}

/// Every output element of every level as one `[1, N, 1, 1]` tensor; the
/// checked loss is its sum.
fn neck_loss(n: &Neck<f64>, xs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
    let flat = n
        .forward(xs)?
        .iter()
        .map(|p| reshape(p, &[1, p.numel(), 1, 1]))
        .collect::<Result<Vec<_>>>()?;
    concat_channels(&flat)
}

/// Runs every gradient check. Individual failures are reported in the rows
/// rather than returned as errors.
pub fn gradcheck_suite(opts: GradSuiteOptions) -> Vec<GradRow> {
    use CheckClass::*;
    let eps = opts.eps;
    type Runner = Box<dyn Fn(&mut Rng64) -> Result<Outcome>>;
    let (exact, curved) = (eps.max(EXACT_STEP), eps.max(CURVED_STEP));
    let op = |h: f64, draw: fn(&mut Rng64) -> Vec<Tensor<f64>>, f: fn(&[Tensor<f64>]) -> Result<Tensor<f64>>| -> Runner {
        Box::new(move |rng| check_op(rng, h, draw, f))
    };

    let cases: Vec<(&str, CheckClass, Runner)> = vec![
        ("add", Smooth, op(exact, |r| vec![u(r, &[2, 3, 2, 2]), u(r, &[2, 3, 1, 1])], |x| add(&x[0], &x[1]))),
        ("sub", Smooth, op(exact, |r| vec![u(r, &[2, 3, 2, 2]), u(r, &[1, 3, 2, 2])], |x| sub(&x[0], &x[1]))),
        ("mul", Smooth, op(exact, |r| vec![u(r, &[2, 3, 2, 2]), u(r, &[2, 1, 2, 2])], |x| mul(&x[0], &x[1]))),
        ("scale", Smooth, op(exact, |r| vec![u(r, &[3, 4])], |x| Ok(scale(&x[0], -1.75)))),
        ("sigmoid", Smooth, op(curved, |r| vec![uniform(r, &[2, 5], -4.0, 4.0)], |x| Ok(sigmoid(&x[0])))),
        ("sqrt", Smooth, op(curved, |r| vec![uniform(r, &[2, 5], 0.5, 2.0)], |x| sqrt(&x[0]))),
        ("sum_all", Smooth, op(exact, |r| vec![u(r, &[2, 3, 4])], |x| Ok(sum_all(&x[0])))),
        ("mean_all", Smooth, op(exact, |r| vec![u(r, &[2, 3, 4])], |x| Ok(mean_all(&x[0])))),
        ("mse", Smooth, op(exact, |r| vec![u(r, &[2, 6]), u(r, &[2, 6])], |x| mse(&x[0], &x[1]))),
        ("reshape", Smooth, op(exact, |r| vec![u(r, &[2, 6])], |x| reshape(&x[0], &[3, 1, 4]))),
        (
            "concat_channels",
            Smooth,
            op(exact, |r| vec![u(r, &[1, 2, 2, 3]), u(r, &[1, 3, 2, 3])], |x| concat_channels(&[x[0].clone(), x[1].clone()])),
        ),
        (
            "interleave_channels",
            Smooth,
            op(exact, |r| vec![u(r, &[2, 3, 2, 2]), u(r, &[2, 3, 2, 2])], |x| interleave_channels(&x[0], &x[1])),
        ),
        ("narrow_channels", Smooth, op(exact, |r| vec![u(r, &[2, 5, 2, 2])], |x| narrow_channels(&x[0], 1, 3))),
        ("strided_subsample", Smooth, op(exact, |r| vec![u(r, &[1, 2, 4, 6])], |x| strided_subsample(&x[0], 1, 0))),
        ("space_to_depth", Smooth, op(exact, |r| vec![u(r, &[2, 2, 4, 4])], |x| space_to_depth(&x[0]))),
        ("depth_to_space", Smooth, op(exact, |r| vec![u(r, &[1, 8, 2, 3])], |x| depth_to_space(&x[0]))),
        (
            "reduce.mean_over_channels",
            Smooth,
            op(exact, |r| vec![u(r, &[2, 4, 3, 3])], |x| reduce(&x[0], Reduction::MeanOverChannels)),
        ),
        ("reduce.global_avg", Smooth, op(exact, |r| vec![u(r, &[2, 3, 3, 4])], |x| reduce(&x[0], Reduction::GlobalAvg))),
        (
            "conv2d",
            Smooth,
            op(
                exact,
                |r| vec![u(r, &[2, 4, 5, 5]), u(r, &[6, 2, 3, 3]), u(r, &[6])],
                |x| conv2d(&x[0], &ConvSpec::new(4, 6, 3).padding(1).groups(2), &x[1], Some(&x[2])),
            ),
        ),
        (
            "conv2d.strided",
            Smooth,
            op(
                exact,
                |r| vec![u(r, &[1, 3, 6, 7]), u(r, &[2, 3, 2, 2])],
                |x| conv2d(&x[0], &ConvSpec::new(3, 2, 2).stride(2).padding(1).bias(false), &x[1], None),
            ),
        ),
        (
            "shared_group_conv1x1",
            Smooth,
            op(
                exact,
                |r| vec![u(r, &[2, 6, 3, 2]), u(r, &[4, 2, 1, 1]), u(r, &[4])],
                |x| shared_group_conv1x1(&x[0], 3, &x[1], Some(&x[2])),
            ),
        ),
        ("nearest_upsample2x", Smooth, op(exact, |r| vec![u(r, &[1, 2, 3, 2])], |x| nearest_upsample2x(&x[0]))),
        ("bilinear_upsample2x", Smooth, op(exact, |r| vec![u(r, &[1, 2, 3, 4])], |x| bilinear_upsample2x(&x[0]))),
        ("relu", Piecewise, op(exact, |r| vec![u(r, &[3, 7])], |x| Ok(relu(&x[0])))),
        (
            "reduce.max_over_channels",
            Piecewise,
            op(exact, |r| vec![u(r, &[2, 4, 3, 3])], |x| reduce(&x[0], Reduction::MaxOverChannels)),
        ),
        ("reduce.global_max", Piecewise, op(exact, |r| vec![u(r, &[2, 3, 3, 4])], |x| reduce(&x[0], Reduction::GlobalMax))),
        (
            "bilinear_sample",
            Piecewise,
            op(
                exact,
                |r| vec![u(r, &[1, 2, 4, 5]), uniform(r, &[1, 1, 3, 3], -1.0, 4.0), uniform(r, &[1, 1, 3, 3], -1.0, 5.0)],
                |x| bilinear_sample(&x[0], &x[1], &x[2]),
            ),
        ),
        (
            "deform_conv2d",
            Piecewise,
            op(
                exact,
                |r| {
                    vec![
                        u(r, &[1, 2, 4, 4]),
                        u(r, &[3, 2, 3, 3]),
                        u(r, &[3]),
                        uniform(r, &[1, 18, 4, 4], -1.5, 1.5),
                        uniform(r, &[1, 9, 4, 4], 0.0, 1.0),
                    ]
                },
                |x| {
                    let field = OffsetField {
                        offsets: x[3].clone(),
                        masks: x[4].clone(),
                    };
                    deform_conv2d(&x[0], &x[1], &x[2], &field)
                },
            ),
        ),
        (
            "block.galm",
            Module,
            Box::new(move |rng| {
                check_module(
                    rng,
                    curved,
                    |r| {
                        let m = Galm::new(&mut ParamFactory::new(r.random()), "galm", 6, 4, 3)?;
                        let m = randomized(m, r, 0.5);
                        Ok((m, vec![u(r, &[2, 6, 3, 3])]))
                    },
                    |m, xs| m.forward(&xs[0]),
                )
            }),
        ),
        (
            "block.spatial_attention",
            Module,
            Box::new(move |rng| {
                check_module(
                    rng,
                    curved,
                    |r| {
                        let m = SpatialAttention::new(&mut ParamFactory::new(r.random()), "sa", 3)?;
                        let m = randomized(m, r, 0.5);
                        Ok((m, vec![u(r, &[1, 3, 4, 4])]))
                    },
                    |m, xs| m.forward(&xs[0]),
                )
            }),
        ),
        (
            "block.channel_attention",
            Module,
            Box::new(move |rng| {
                check_module(
                    rng,
                    curved,
                    |r| {
                        let m = ChannelAttention::new(&mut ParamFactory::new(r.random()), "ca", 8, 4);
                        let m = randomized(m, r, 0.5);
                        Ok((m, vec![u(r, &[1, 8, 3, 3])]))
                    },
                    |m, xs| m.forward(&xs[0]),
                )
            }),
        ),
        (
            "block.stdds",
            Module,
            Box::new(move |rng| {
                check_module(
                    rng,
                    curved,
                    |r| {
                        let m = Stdds::new(&mut ParamFactory::new(r.random()), "stdds", 2, 3, 4)?;
                        let m = randomized(m, r, 0.5);
                        Ok((m, vec![u(r, &[1, 2, 4, 4])]))
                    },
                    |m, xs| m.forward(&xs[0]),
                )
            }),
        ),
        (
            "block.spam",
            Block,
            Box::new(move |rng| {
                check_module(
                    rng,
                    curved,
                    |r| {
                        let m = Spam::new(&mut ParamFactory::new(r.random()), "spam", 2, 3, 4)?;
                        let m = randomized(m, r, 0.5);
                        Ok((m, vec![u(r, &[1, 2, 4, 4]), u(r, &[1, 2, 2, 2])]))
                    },
                    |m, xs| m.forward(&xs[0], &xs[1]),
                )
            }),
        ),
        (
            "block.seam",
            Module,
            Box::new(move |rng| {
                check_module(
                    rng,
                    curved,
                    |r| {
                        let m = Seam::new(&mut ParamFactory::new(r.random()), "seam", 2, 16);
                        let m = randomized(m, r, 0.6);
                        Ok((m, vec![u(r, &[1, 2, 3, 4]), u(r, &[1, 2, 3, 4])]))
                    },
                    |m, xs| m.fuse(&xs[0], &xs[1]),
                )
            }),
        ),
    ];

    let neck_cases = Variant::ALL.into_iter().map(|variant| {
        let runner: Runner = Box::new(move |rng| {
            check_module(
                rng,
                curved,
                |r| {
                    let cfg = NeckConfig { seed: r.random(), ..small_neck(variant) };
                    let neck = randomized(Neck::<f64>::build(&cfg)?, r, 0.3);
                    let xs = vec![uniform(r, &[1, 4, 8, 8], -5.0, 5.0), uniform(r, &[1, 6, 4, 4], -5.0, 5.0)];
                    Ok((neck, xs))
                },
                neck_loss,
            )
        });
        (variant, runner)
    });

    let mut rng = Rng64::seed_from_u64(opts.seed);
    let mut rows: Vec<GradRow> = Vec::new();
    let mut run = |name: String, class: CheckClass, runner: &Runner, rng: &mut Rng64| {
        let tol = opts.tol.unwrap_or(class.tolerance());
        let row = match runner(rng) {
            Ok(o) => GradRow {
                name,
                class,
                h: o.h,
                tol,
                max_rel_err: o.report.max_rel_err,
                coords: o.report.coords_checked,
                kink_margin: o.report.kink_margin,
                stencil_crossings: o.report.stencil_crossings,
                draws: o.draws,
                worst: o.report.worst.map(|(i, k)| (i, k, o.report.analytic_at_worst, o.report.numeric_at_worst)),
                pass: o.report.passes(tol) && o.report.kink_free(),
                error: None,
            },
            Err(e) => GradRow {
                name,
                class,
                h: eps,
                tol,
                max_rel_err: f64::INFINITY,
                coords: 0,
                kink_margin: f64::NAN,
                stencil_crossings: 0,
                draws: 0,
                worst: None,
                pass: false,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    };
    for (name, class, runner) in &cases {
        run(name.to_string(), *class, runner, &mut rng);
    }
    for (variant, runner) in neck_cases {
        run(format!("neck.{variant}"), Block, &runner, &mut rng);
    }
    rows
}

// ── fast-vs-naive equivalence ───────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub name: String,
    pub cases: usize,
    pub max_abs_dev: f64,
    pub tol: f64,
    pub pass: bool,
}

fn dense(t: &Tensor<f64>) -> DenseArray {
    DenseArray::new(t.shape(), t.to_vec()).expect("tensor shape matches its data")
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).abs();
            if d.is_nan() {
                f64::INFINITY
            } else {
                d
            }
        })
        .fold(0.0, f64::max)
}

struct ConvCase {
    x: Tensor<f64>,
    w: Tensor<f64>,
    b: Option<Tensor<f64>>,
    spec: ConvSpec,
}

fn conv_case(r: &mut Rng64) -> ConvCase {
    let groups = [1, 2, 4][r.random_range(0..3)];
    let c_in = groups * r.random_range(1..=8 / groups);
    let c_out = groups * r.random_range(1..=8 / groups);
    let stride = r.random_range(1..=2);
    let pad = [0, 1, 3][r.random_range(0..3)];
    let (h, w) = (r.random_range(1..=9), r.random_range(1..=9));
    let k = r.random_range(1..=3usize.min(h.min(w) + 2 * pad));
    let batch = r.random_range(1..=2);
    let has_bias = r.random_bool(0.5);
    let spec = ConvSpec::new(c_in, c_out, k)
        .stride(stride)
        .padding(pad)
        .groups(groups)
        .bias(has_bias);
    ConvCase {
        x: uniform(r, &[batch, c_in, h, w], -1.0, 1.0),
        w: uniform(r, &spec.weight_shape(), -1.0, 1.0),
        b: has_bias.then(|| uniform(r, &[c_out], -1.0, 1.0)),
        spec,
    }
}

fn oracle_conv(r: &mut Rng64, trials: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let c = conv_case(r);
        let fast = conv2d(&c.x, &c.spec, &c.w, c.b.as_ref())?;
        let bias = c.b.as_ref().map(|b| b.to_vec());
        let slow = naive_conv2d(&dense(&c.x), &dense(&c.w), bias.as_deref(), c.spec.stride, c.spec.padding, c.spec.groups)
            .map_err(|e| crate::Error::Contract(e.to_string()))?;
        worst = worst.max(max_dev(fast.data(), &slow.data));
    }
    Ok(worst)
}

struct DcnCase {
    x: Tensor<f64>,
    w: Tensor<f64>,
    b: Tensor<f64>,
    field: OffsetField<f64>,
}

fn dcn_case(r: &mut Rng64, offsets: impl Fn(&mut Rng64, &[usize]) -> Tensor<f64>, unit_masks: bool) -> DcnCase {
    let batch = r.random_range(1..=2);
    let (c, o) = (r.random_range(1..=4), r.random_range(1..=4));
    let (h, w) = (r.random_range(1..=7), r.random_range(1..=7));
    let masks = if unit_masks {
        Tensor::from_vec(vec![1.0; batch * 9 * h * w], &[batch, 9, h, w]).expect("shape")
    } else {
        uniform(r, &[batch, 9, h, w], 0.0, 1.0)
    };
    DcnCase {
        x: uniform(r, &[batch, c, h, w], -1.0, 1.0),
        w: uniform(r, &[o, c, 3, 3], -1.0, 1.0),
        b: uniform(r, &[o], -1.0, 1.0),
        field: OffsetField {
            offsets: offsets(r, &[batch, 18, h, w]),
            masks,
        },
    }
}

fn oracle_deform(r: &mut Rng64, trials: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let c = dcn_case(r, |r, s| uniform(r, s, -2.5, 2.5), false);
        let fast = deform_conv2d(&c.x, &c.w, &c.b, &c.field)?;
        let slow = naive_deform_conv2d(
            &dense(&c.x),
            &dense(&c.w),
            c.b.data(),
            &dense(&c.field.offsets),
            &dense(&c.field.masks),
        )
        .map_err(|e| crate::Error::Contract(e.to_string()))?;
        worst = worst.max(max_dev(fast.data(), &slow.data));
    }
    Ok(worst)
}

fn oracle_dcn_zero_offsets(r: &mut Rng64, trials: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let c = dcn_case(r, |_, s| Tensor::zeros(s).expect("shape"), true);
        let [_, ci, _, _] = c.x.dims4("oracle")?;
        let co = c.w.shape()[0];
        let dcn = deform_conv2d(&c.x, &c.w, &c.b, &c.field)?;
        let conv = conv2d(&c.x, &ConvSpec::new(ci, co, 3).padding(1), &c.w, Some(&c.b))?;
        worst = worst.max(max_dev(dcn.data(), conv.data()));
    }
    Ok(worst)
}

/// Uniform integer offsets `(dy, dx)` move every read, so the deformable
/// output at `(i, j)` equals the plain convolution at `(i + dy, j + dx)`
/// wherever that pixel exists.
fn oracle_dcn_integer_shift(r: &mut Rng64, trials: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let dy = r.random_range(-2i64..=2);
        let dx = r.random_range(-2i64..=2);
        let c = dcn_case(
            r,
            |_, s| {
                let p = s[2] * s[3];
                let data = (0..s[0] * 18)
                    .flat_map(|ch| std::iter::repeat_n(if ch % 2 == 0 { dy as f64 } else { dx as f64 }, p))
                    .collect();
                Tensor::from_vec(data, s).expect("shape")
            },
            true,
        );
        let [b, ci, h, w] = c.x.dims4("oracle")?;
        let co = c.w.shape()[0];
        let dcn = deform_conv2d(&c.x, &c.w, &c.b, &c.field)?;
        let conv = conv2d(&c.x, &ConvSpec::new(ci, co, 3).padding(1), &c.w, Some(&c.b))?;
        for n in 0..b * co {
            for i in 0..h as i64 {
                for j in 0..w as i64 {
                    let (si, sj) = (i + dy, j + dx);
                    if si < 0 || sj < 0 || si >= h as i64 || sj >= w as i64 {
                        continue;
                    }
                    let a = dcn.data()[n * h * w + (i as usize) * w + j as usize];
                    let e = conv.data()[n * h * w + (si as usize) * w + sj as usize];
                    worst = worst.max((a - e).abs());
                }
            }
        }
    }
    Ok(worst)
}

fn oracle_space_to_depth(r: &mut Rng64, trials: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let dims = [r.random_range(1..=2), r.random_range(1..=4), 2 * r.random_range(1..=5), 2 * r.random_range(1..=5)];
        let x = uniform(r, &dims, -1.0, 1.0);
        let fast = space_to_depth(&x)?;
        let slow = naive_space_to_depth(&dense(&x)).map_err(|e| crate::Error::Contract(e.to_string()))?;
        let back = depth_to_space(&fast)?;
        let bitwise = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        if !bitwise(fast.data(), &slow.data) || !bitwise(back.data(), x.data()) {
            worst = f64::INFINITY;
        }
    }
    Ok(worst)
}

/// Fast kernels against the brute-force references.
pub fn oracle_suite(trials: usize, seed: u64) -> Vec<OracleRow> {
    type Check = fn(&mut Rng64, usize) -> Result<f64>;
    let checks: [(&str, f64, Check); 5] = [
        ("conv2d_vs_naive", 1e-12, oracle_conv),
        ("deform_conv2d_vs_naive", 1e-12, oracle_deform),
        ("deform_zero_offsets_vs_conv2d", 1e-10, oracle_dcn_zero_offsets),
        ("deform_integer_shift", 1e-12, oracle_dcn_integer_shift),
        ("space_to_depth_bitwise", 0.0, oracle_space_to_depth),
    ];
    let mut rng = Rng64::seed_from_u64(seed);
    checks
        .into_iter()
        .map(|(name, tol, check)| {
            let dev = check(&mut rng, trials).unwrap_or(f64::INFINITY);
            OracleRow {
                name: name.to_string(),
                cases: trials,
                max_abs_dev: dev,
                tol,
                pass: dev <= tol,
            }
        })
        .collect()
}
