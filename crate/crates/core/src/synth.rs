//! Synthetic misalignment data and the feature-space alignment experiment.
//!
//! A clean pyramid is built from random anisotropic Gaussian blobs and
//! repeated 2×2 average pooling. The neck sees the clean finest level next to
//! translated (and optionally warped) copies of the deeper levels, and is
//! trained so that its bottom-up features match the clean deeper levels.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{ExperimentConfig, MetricsRecord, OptimizerKind, RunConfig};
use crate::nn::{deform_conv2d, OffsetField};
use crate::optim::{Optimizer, Rule};
use crate::param::{Module, WithGrad};
use crate::pyramid::{Neck, NeckConfig, Variant};
use crate::tensor::ops::{add, mse, scale};
use crate::tensor::{backward, Element, Tensor};

pub const BLOBS_PER_CHANNEL: usize = 6;
pub const MIN_BASE_HW: usize = 32;
const SIGMA_RANGE: (f64, f64) = (4.0, 10.0);
const AMPLITUDE_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Clone)]
pub struct SynthDataset<T: Element> {
    /// Clean pyramid, levels `1..=L`.
    pub shallow: Vec<Tensor<T>>,
    /// Corrupted copies of levels `2..=L`.
    pub deep: Vec<Tensor<T>>,
    pub shift_px: [f64; 2],
    pub warp_amp: f64,
    pub seed: u64,
}

impl<T: Element> SynthDataset<T> {
    /// Clean levels `2..=L`.
    pub fn targets(&self) -> &[Tensor<T>] {
        &self.shallow[1..]
    }

    /// `[clean level 1, corrupted levels 2..=L]`.
    pub fn neck_inputs(&self) -> Vec<Tensor<T>> {
        std::iter::once(self.shallow[0].clone()).chain(self.deep.iter().cloned()).collect()
    }
}

/// Dense `[B,C,H,W]` buffer used while generating.
#[derive(Clone)]
struct Plane {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Plane {
    fn at(&self, n: usize, y: isize, x: isize) -> f64 {
        let [_, _, h, w] = self.dims;
        if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
            0.0
        } else {
            self.data[n * h * w + y as usize * w + x as usize]
        }
    }

    fn avg_pool2(&self) -> Plane {
        let [b, c, h, w] = self.dims;
        let (ho, wo) = (h / 2, w / 2);
        let mut data = Vec::with_capacity(b * c * ho * wo);
        for n in 0..b * c {
            let src = &self.data[n * h * w..][..h * w];
            for i in 0..ho {
                for j in 0..wo {
                    let s = src[2 * i * w + 2 * j]
                        + src[2 * i * w + 2 * j + 1]
                        + src[(2 * i + 1) * w + 2 * j]
                        + src[(2 * i + 1) * w + 2 * j + 1];
                    data.push(0.25 * s);
                }
            }
        }
        Plane { dims: [b, c, ho, wo], data }
    }

    /// Zero-padded bilinear read at real coordinates.
    fn sample(&self, n: usize, y: f64, x: f64) -> f64 {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let mut v = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                if wy * wx != 0.0 {
                    v += wy * wx * self.at(n, y0 + dy, x0 + dx);
                }
            }
        }
        v
    }

    /// `out(y,x) = self(y + d_y(y,x), x + d_x(y,x))`.
    fn displaced(&self, shift: [f64; 2], warp_amp: f64) -> Plane {
        let [b, c, h, w] = self.dims;
        let mut data = Vec::with_capacity(self.data.len());
        for n in 0..b * c {
            for y in 0..h {
                for x in 0..w {
                    let [dy, dx] = displacement(shift, warp_amp, y, x, h, w);
                    data.push(self.sample(n, y as f64 + dy, x as f64 + dx));
                }
            }
        }
        Plane { dims: self.dims, data }
    }

    fn tensor<T: Element>(&self) -> Result<Tensor<T>> {
        Tensor::from_vec(self.data.iter().map(|&v| T::from_f64(v)).collect(), &self.dims)
    }
}

/// Translation plus a smooth sinusoidal warp: rows bend with the column
/// coordinate and columns with the row coordinate.
pub fn displacement(shift: [f64; 2], warp_amp: f64, y: usize, x: usize, h: usize, w: usize) -> [f64; 2] {
    if warp_amp == 0.0 {
        return shift;
    }
    [
        shift[0] + warp_amp * (2.0 * PI * x as f64 / w as f64).sin(),
        shift[1] + warp_amp * (2.0 * PI * y as f64 / h as f64).sin(),
    ]
}

fn blob_plane(rng: &mut ChaCha8Rng, b: usize, c: usize, hw: usize) -> Plane {
    let mut data = vec![0.0; b * c * hw * hw];
    for plane in data.chunks_exact_mut(hw * hw) {
        for _ in 0..BLOBS_PER_CHANNEL {
            let cy = rng.random_range(0.0..hw as f64);
            let cx = rng.random_range(0.0..hw as f64);
            let su = rng.random_range(SIGMA_RANGE.0..SIGMA_RANGE.1);
            let sv = rng.random_range(SIGMA_RANGE.0..SIGMA_RANGE.1);
            let theta = rng.random_range(0.0..PI);
            let amp = rng.random_range(AMPLITUDE_RANGE.0..AMPLITUDE_RANGE.1);
            let (sin, cos) = theta.sin_cos();
            for y in 0..hw {
                for x in 0..hw {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    let u = cos * dx + sin * dy;
                    let v = -sin * dx + cos * dy;
                    plane[y * hw + x] += amp * (-0.5 * (u * u / (su * su) + v * v / (sv * sv))).exp();
                }
            }
        }
    }
    Plane {
        dims: [b, c, hw, hw],
        data,
    }
}

/// Checks that a neck configuration and experiment settings describe a
/// valid synthetic run.
pub fn check_experiment(neck: &NeckConfig, exp: &ExperimentConfig) -> Result<()> {
    neck.validate()?;
    exp.validate()?;
    let key = |k: &str| format!("experiment.{k}");
    if exp.base_hw < MIN_BASE_HW || exp.base_hw % 2 != 0 {
        return Err(Error::config(
            key("base_hw"),
            format!("must be even and at least {MIN_BASE_HW}, got {}", exp.base_hw),
        ));
    }
    let chain = 1usize << (neck.levels - 1);
    if exp.base_hw % chain != 0 {
        return Err(Error::config(
            key("base_hw"),
            format!("{} does not halve evenly across {} levels", exp.base_hw, neck.levels),
        ));
    }
    let limit = (exp.base_hw / 8) as f64;
    if exp.shift_px.iter().any(|s| s.abs() > limit) {
        return Err(Error::config(
            key("shift_px"),
            format!("{:?} exceeds base_hw/8 = {limit}", exp.shift_px),
        ));
    }
    if let Some(i) = neck.in_channels.iter().position(|&c| c != neck.out_channels) {
        return Err(Error::config(
            "in_channels",
            format!(
                "level {} has {} channels; the experiment compares against clean features and needs every level at out_channels = {}",
                i + 1,
                neck.in_channels[i],
                neck.out_channels
            ),
        ));
    }
    Ok(())
}

pub fn synth_generate<T: Element>(neck: &NeckConfig, exp: &ExperimentConfig, seed: u64) -> Result<SynthDataset<T>> {
    check_experiment(neck, exp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clean = vec![blob_plane(&mut rng, exp.batch, neck.out_channels, exp.base_hw)];
    for _ in 1..neck.levels {
        let next = clean.last().expect("non-empty").avg_pool2();
        clean.push(next);
    }
    let deep = clean[1..]
        .iter()
        .map(|p| p.displaced(exp.shift_px, exp.warp_amp).tensor())
        .collect::<Result<_>>()?;
    Ok(SynthDataset {
        shallow: clean.iter().map(Plane::tensor).collect::<Result<_>>()?,
        deep,
        shift_px: exp.shift_px,
        warp_amp: exp.warp_amp,
        seed,
    })
}

// ── constructive oracle ─────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleLevel {
    pub level: usize,
    /// Largest absolute deviation from the clean level on interior pixels.
    pub max_abs: f64,
    /// `‖out − target‖ / ‖target‖` on interior pixels.
    pub rel_err: f64,
}

/// Hand-set deformable convolution that undoes the corruption: identity
/// kernel at the centre tap, unit masks and offsets equal to the negated
/// displacement. Exact for integer translations; measured on pixels at least
/// `ceil(|shift|)` away from the border, where the corrupted map still holds
/// the content.
pub fn constructive_oracle<T: Element>(data: &SynthDataset<T>) -> Result<Vec<OracleLevel>> {
    data.deep
        .iter()
        .zip(data.targets())
        .enumerate()
        .map(|(i, (deep, target))| {
            let [b, c, h, w] = deep.dims4("constructive_oracle")?;
            let p = h * w;
            let mut weight = vec![T::zero(); c * c * 9];
            for ch in 0..c {
                weight[(ch * c + ch) * 9 + 4] = T::one();
            }
            let mut offsets = vec![T::zero(); b * 18 * p];
            for n in 0..b {
                for y in 0..h {
                    for x in 0..w {
                        let [dy, dx] = displacement(data.shift_px, data.warp_amp, y, x, h, w);
                        for k in 0..9 {
                            offsets[(n * 18 + 2 * k) * p + y * w + x] = T::from_f64(-dy);
                            offsets[(n * 18 + 2 * k + 1) * p + y * w + x] = T::from_f64(-dx);
                        }
                    }
                }
            }
            let field = OffsetField {
                offsets: Tensor::from_vec(offsets, &[b, 18, h, w])?,
                masks: Tensor::from_vec(vec![T::one(); b * 9 * p], &[b, 9, h, w])?,
            };
            let out = deform_conv2d(
                deep,
                &Tensor::from_vec(weight, &[c, c, 3, 3])?,
                &Tensor::zeros(&[c])?,
                &field,
            )?;
            let reach = |s: f64| (s.abs() + data.warp_amp).ceil() as usize;
            let (my, mx) = (reach(data.shift_px[0]), reach(data.shift_px[1]));
            let (mut max_abs, mut num, mut den) = (0.0f64, 0.0, 0.0);
            for n in 0..b * c {
                for y in my..h.saturating_sub(my) {
                    for x in mx..w.saturating_sub(mx) {
                        let idx = n * p + y * w + x;
                        let t = target.data()[idx].as_f64();
                        let e = out.data()[idx].as_f64() - t;
                        max_abs = max_abs.max(e.abs());
                        num += e * e;
                        den += t * t;
                    }
                }
            }
            Ok(OracleLevel {
                level: i + 2,
                max_abs,
                rel_err: (num / den.max(f64::MIN_POSITIVE)).sqrt(),
            })
        })
        .collect()
}

// ── training ────────────────────────────────────────────────────────

/// Per-level MSE between the neck's aligned features and the clean levels.
pub fn level_errors<T: Element>(neck: &Neck<T>, data: &SynthDataset<T>) -> Result<Vec<Tensor<T>>> {
    let feats = neck.alignment_features(&data.neck_inputs())?;
    feats.iter().zip(data.targets()).map(|(a, t)| mse(a, t)).collect()
}

fn scalars<T: Element>(levels: &[Tensor<T>]) -> Result<Vec<f64>> {
    levels.iter().map(|e| Ok(e.item()?.as_f64())).collect()
}

fn record_for(step: usize, errs: &[f64], loss: f64) -> MetricsRecord {
    let mut rec = MetricsRecord::new(step as u64, loss, errs.iter().copied().fold(f64::INFINITY, f64::min));
    for (i, e) in errs.iter().enumerate() {
        rec.extra.insert(format!("mse_level_{}", i + 2), *e);
    }
    rec
}

/// Trains the neck for `exp.steps` steps on the mean per-level MSE, calling
/// `emit` with one record per step (the loss before that step's update).
/// Only parameters that the objective reaches are updated. Wall time is
/// recorded only when `wall_clock` is set, so that streams are reproducible.
pub fn synth_train<T: Element>(
    neck: &mut Neck<T>,
    data: &SynthDataset<T>,
    exp: &ExperimentConfig,
    wall_clock: bool,
    mut emit: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<MetricsRecord> {
    exp.validate()?;
    let rule = match exp.optimizer {
        OptimizerKind::Adam => Rule::adam(exp.lr),
        OptimizerKind::Sgd => Rule::sgd(exp.lr),
    };
    let mut opt = Optimizer::new(rule);
    let start = Instant::now();
    let mut last = None;
    for step in 0..exp.steps {
        let levels = level_errors(neck, data)?;
        let total = levels.iter().skip(1).try_fold(levels[0].clone(), |acc, e| add(&acc, e))?;
        let loss = scale(&total, T::from_f64(1.0 / levels.len() as f64));
        let value = loss.item()?.as_f64();
        if !value.is_finite() {
            return Err(Error::Diverged {
                step,
                last_finite: step.checked_sub(1),
            });
        }
        let mut rec = record_for(step, &scalars(&levels)?, value);
        if wall_clock {
            rec.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        }
        emit(&rec)?;
        last = Some(rec);

        let grads = backward(&loss)?;
        neck.visit_params_mut(&mut |p| {
            p.zero_grad();
            p.accumulate_grad(&grads);
        });
        opt.step(&mut WithGrad(neck))?;
    }
    Ok(last.expect("at least one step"))
}

/// Alignment error of the current parameters without training.
pub fn evaluate<T: Element>(neck: &Neck<T>, data: &SynthDataset<T>) -> Result<f64> {
    Ok(scalars(&level_errors(neck, data)?)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// Outcome of one generate-and-train run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentRun {
    pub variant: Variant,
    pub seed: u64,
    pub steps: usize,
    /// Mean per-level MSE before the first update.
    pub initial_loss: f64,
    /// Mean per-level MSE after the last update.
    pub final_loss: f64,
    pub initial_align_err: f64,
    pub final_align_err: f64,
    pub oracle: Vec<OracleLevel>,
}

impl AlignmentRun {
    pub fn loss_ratio(&self) -> f64 {
        self.final_loss / self.initial_loss
    }

    pub fn oracle_max_abs(&self) -> f64 {
        self.oracle.iter().map(|o| o.max_abs).fold(0.0, f64::max)
    }
}

/// Generates the dataset for `seed`, builds the neck with `seed` as its
/// initialisation seed and trains it, streaming one record per step.
/// Returns the summary together with the trained neck.
pub fn run_alignment<T: Element>(
    cfg: &RunConfig,
    seed: u64,
    wall_clock: bool,
    emit: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<(AlignmentRun, Neck<T>)> {
    let neck_cfg = NeckConfig { seed, ..cfg.neck.clone() };
    let exp = &cfg.experiment;
    let data = synth_generate::<T>(&neck_cfg, exp, seed)?;
    let oracle = constructive_oracle(&data)?;
    let mut neck = Neck::<T>::build(&neck_cfg)?;
    let before = scalars(&level_errors(&neck, &data)?)?;
    synth_train(&mut neck, &data, exp, wall_clock, emit)?;
    let after = scalars(&level_errors(&neck, &data)?)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let run = AlignmentRun {
        variant: neck_cfg.variant,
        seed,
        steps: exp.steps,
        initial_loss: mean(&before),
        final_loss: mean(&after),
        initial_align_err: min(&before),
        final_align_err: min(&after),
        oracle,
    };
    Ok((run, neck))
}
