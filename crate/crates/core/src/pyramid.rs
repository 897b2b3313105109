//! The assembled neck: laterals, the bottom-up alignment path, the top-down
//! fusion path and optional 3×3 output smoothing, plus the reversed-order
//! and plain-FPN variants used as baselines.
//!
//! Level 1 is the highest resolution. Every deeper level halves both spatial
//! extents exactly.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galm::Galm;
use crate::nn::{bilinear_upsample2x, nearest_upsample2x, Conv2d, ConvSpec};
use crate::param::{Module, ParamFactory, Parameter};
use crate::seam::Seam;
use crate::spam::Spam;
use crate::tensor::ops::add;
use crate::tensor::{DType, Element, Tensor};

pub const MIN_LEVELS: usize = 2;
pub const MAX_LEVELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Bottom-up alignment first, then top-down fusion.
    Bafpn,
    /// Top-down fusion first, then bottom-up alignment.
    BafpnR,
    /// Plain 1×1 laterals with additive top-down fusion.
    Fpn,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Bafpn, Variant::BafpnR, Variant::Fpn];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Bafpn => "bafpn",
            Variant::BafpnR => "bafpn_r",
            Variant::Fpn => "fpn",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeckConfig {
    pub levels: usize,
    pub in_channels: Vec<usize>,
    pub out_channels: usize,
    pub galm_groups: usize,
    pub attn_kernel: usize,
    pub attn_reduction: usize,
    pub variant: Variant,
    pub upsample: Upsample,
    pub output_convs: bool,
    pub dtype: DType,
    pub seed: u64,
}

impl NeckConfig {
    pub const DEFAULT_OUT_CHANNELS: usize = 256;
    pub const DEFAULT_GALM_GROUPS: usize = 4;
    pub const DEFAULT_ATTN_KERNEL: usize = 7;
    pub const DEFAULT_ATTN_REDUCTION: usize = 16;

    /// Defaults for everything except the per-level input widths.
    pub fn new(in_channels: Vec<usize>) -> Self {
        NeckConfig {
            levels: in_channels.len(),
            in_channels,
            out_channels: Self::DEFAULT_OUT_CHANNELS,
            galm_groups: Self::DEFAULT_GALM_GROUPS,
            attn_kernel: Self::DEFAULT_ATTN_KERNEL,
            attn_reduction: Self::DEFAULT_ATTN_REDUCTION,
            variant: Variant::Bafpn,
            upsample: Upsample::Nearest,
            output_convs: true,
            dtype: DType::Float32,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_LEVELS..=MAX_LEVELS).contains(&self.levels) {
            return Err(Error::config(
                "levels",
                format!("must be between {MIN_LEVELS} and {MAX_LEVELS}, got {}", self.levels),
            ));
        }
        if self.in_channels.len() != self.levels {
            return Err(Error::config(
                "in_channels",
                format!("{} entries for {} levels", self.in_channels.len(), self.levels),
            ));
        }
        if let Some(i) = self.in_channels.iter().position(|&c| c == 0) {
            return Err(Error::config("in_channels", format!("level {} has zero channels", i + 1)));
        }
        if self.out_channels == 0 {
            return Err(Error::config("out_channels", "must be positive"));
        }
        if self.galm_groups == 0 {
            return Err(Error::config("galm_groups", "must be positive"));
        }
        for (i, &c) in self.in_channels.iter().enumerate() {
            if c % self.galm_groups != 0 {
                return Err(Error::config(
                    "galm_groups",
                    format!(
                        "level {}: {} input channels are not divisible by {} groups",
                        i + 1,
                        c,
                        self.galm_groups
                    ),
                ));
            }
        }
        if self.attn_kernel % 2 == 0 {
            return Err(Error::config(
                "attn_kernel",
                format!("must be odd, got {}", self.attn_kernel),
            ));
        }
        if self.attn_reduction == 0 {
            return Err(Error::config("attn_reduction", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Laterals<T: Element> {
    Galm(Vec<Galm<T>>),
    Plain(Vec<Conv2d<T>>),
}

impl<T: Element> Laterals<T> {
    fn forward(&self, level: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Laterals::Galm(v) => v[level].forward(x),
            Laterals::Plain(v) => v[level].forward(x),
        }
    }
}

impl<T: Element> Module<T> for Laterals<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        match self {
            Laterals::Galm(v) => v.visit_params(f),
            Laterals::Plain(v) => v.visit_params(f),
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        match self {
            Laterals::Galm(v) => v.visit_params_mut(f),
            Laterals::Plain(v) => v.visit_params_mut(f),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Neck<T: Element> {
    cfg: NeckConfig,
    pub laterals: Laterals<T>,
    /// `spam[i]` aligns level `i + 2` against level `i + 1`.
    pub spam: Vec<Spam<T>>,
    /// `seam[i]` fuses level `i + 2` into level `i + 1`.
    pub seam: Vec<Seam<T>>,
    pub out: Vec<Conv2d<T>>,
}

impl<T: Element> Neck<T> {
    pub fn build(cfg: &NeckConfig) -> Result<Self> {
        cfg.validate()?;
        let mut f = ParamFactory::new(cfg.seed);
        let c = cfg.out_channels;
        let levels = 1..=cfg.levels;
        let boundaries = 1..cfg.levels;
        let laterals = match cfg.variant {
            Variant::Fpn => Laterals::Plain(
                levels
                    .clone()
                    .map(|l| {
                        let spec = ConvSpec::new(cfg.in_channels[l - 1], c, 1);
                        Conv2d::new(&mut f, &format!("lateral.{l}"), spec)
                    })
                    .collect(),
            ),
            Variant::Bafpn | Variant::BafpnR => Laterals::Galm(
                levels
                    .clone()
                    .map(|l| Galm::new(&mut f, &format!("galm.{l}"), cfg.in_channels[l - 1], c, cfg.galm_groups))
                    .collect::<Result<_>>()?,
            ),
        };
        let (spam, seam) = if cfg.variant == Variant::Fpn {
            (Vec::new(), Vec::new())
        } else {
            let spam = boundaries
                .clone()
                .map(|l| Spam::new(&mut f, &format!("spam.{l}"), c, cfg.attn_kernel, cfg.attn_reduction))
                .collect::<Result<_>>()?;
            let seam = boundaries
                .map(|l| Seam::new(&mut f, &format!("seam.{l}"), c, cfg.attn_reduction))
                .collect();
            (spam, seam)
        };
        let out = if cfg.output_convs {
            levels
                .map(|l| Conv2d::new(&mut f, &format!("out.{l}"), ConvSpec::new(c, c, 3).padding(1)))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Neck {
            cfg: cfg.clone(),
            laterals,
            spam,
            seam,
            out,
        })
    }

    pub fn config(&self) -> &NeckConfig {
        &self.cfg
    }

    fn check_inputs(&self, feats: &[Tensor<T>]) -> Result<()> {
        if feats.len() != self.cfg.levels {
            return Err(Error::shape(
                "neck_forward",
                format!("{} feature maps for {} levels", feats.len(), self.cfg.levels),
            ));
        }
        let mut prev: Option<[usize; 4]> = None;
        for (i, x) in feats.iter().enumerate() {
            let d = x.dims4("neck_forward")?;
            if d[1] != self.cfg.in_channels[i] {
                return Err(Error::shape(
                    "neck_forward",
                    format!("level {} has {} channels, expected {}", i + 1, d[1], self.cfg.in_channels[i]),
                ));
            }
            if let Some(p) = prev {
                if d[0] != p[0] || p[2] != 2 * d[2] || p[3] != 2 * d[3] {
                    return Err(Error::shape(
                        "neck_forward",
                        format!(
                            "levels {} -> {}: {:?} does not halve into {:?}",
                            i,
                            i + 1,
                            [p[0], p[2], p[3]],
                            [d[0], d[2], d[3]]
                        ),
                    ));
                }
            }
            prev = Some(d);
        }
        Ok(())
    }

    fn upsample(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.cfg.upsample {
            Upsample::Nearest => nearest_upsample2x(x),
            Upsample::Bilinear => bilinear_upsample2x(x),
        }
    }

    fn laterals(&self, feats: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        feats.iter().enumerate().map(|(i, x)| self.laterals.forward(i, x)).collect()
    }

    fn bottom_up(&self, mut xs: Vec<Tensor<T>>) -> Result<Vec<Tensor<T>>> {
        for i in 0..xs.len() - 1 {
            xs[i + 1] = self.spam[i].forward(&xs[i], &xs[i + 1])?;
        }
        Ok(xs)
    }

    fn top_down(&self, mut xs: Vec<Tensor<T>>) -> Result<Vec<Tensor<T>>> {
        for i in (0..xs.len() - 1).rev() {
            let up = self.upsample(&xs[i + 1])?;
            xs[i] = match self.cfg.variant {
                Variant::Fpn => add(&up, &xs[i])?,
                _ => self.seam[i].fuse(&up, &xs[i])?,
            };
        }
        Ok(xs)
    }

    fn smooth(&self, xs: Vec<Tensor<T>>) -> Result<Vec<Tensor<T>>> {
        if self.out.is_empty() {
            return Ok(xs);
        }
        xs.iter().zip(&self.out).map(|(x, conv)| conv.forward(x)).collect()
    }

    /// Output pyramid `P_1..P_L`, each `[B, C_out, H_i, W_i]`.
    pub fn forward(&self, feats: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        self.check_inputs(feats)?;
        let lat = self.laterals(feats)?;
        let fused = match self.cfg.variant {
            Variant::Bafpn => self.top_down(self.bottom_up(lat)?)?,
            Variant::BafpnR => self.bottom_up(self.top_down(lat)?)?,
            Variant::Fpn => self.top_down(lat)?,
        };
        self.smooth(fused)
    }

    /// Features of levels `2..=L` after the bottom-up alignment path (for
    /// `fpn`, which has none, the output features of those levels).
    pub fn alignment_features(&self, feats: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        self.check_inputs(feats)?;
        let mut xs = match self.cfg.variant {
            Variant::Bafpn => self.bottom_up(self.laterals(feats)?)?,
            Variant::BafpnR => self.bottom_up(self.top_down(self.laterals(feats)?)?)?,
            Variant::Fpn => self.forward(feats)?,
        };
        xs.remove(0);
        Ok(xs)
    }

    pub fn param_count_report(&self) -> Result<ParamCountReport> {
        ParamCountReport::new(self)
    }
}

impl<T: Element> Module<T> for Neck<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.laterals.visit_params(f);
        self.spam.visit_params(f);
        self.seam.visit_params(f);
        self.out.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.laterals.visit_params_mut(f);
        self.spam.visit_params_mut(f);
        self.seam.visit_params_mut(f);
        self.out.visit_params_mut(f);
    }
}

pub fn build_neck<T: Element>(cfg: &NeckConfig) -> Result<Neck<T>> {
    Neck::build(cfg)
}

pub fn neck_forward<T: Element>(neck: &Neck<T>, feats: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    neck.forward(feats)
}

// ── parameter accounting ────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModuleRow {
    pub name: String,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub module: String,
    pub params: usize,
    pub baseline: String,
    pub baseline_params: usize,
    pub ratio: f64,
    pub smaller: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantTotal {
    pub variant: Variant,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCountReport {
    pub variant: Variant,
    pub out_channels: usize,
    pub modules: Vec<ModuleRow>,
    pub total: usize,
    pub comparisons: Vec<ComparisonRow>,
    pub variant_totals: Vec<VariantTotal>,
}

fn comparison(module: String, params: usize, baseline: &str, baseline_params: usize) -> ComparisonRow {
    ComparisonRow {
        module,
        params,
        baseline: baseline.to_string(),
        baseline_params,
        ratio: params as f64 / baseline_params as f64,
        smaller: params < baseline_params,
    }
}

impl ParamCountReport {
    fn new<T: Element>(neck: &Neck<T>) -> Result<Self> {
        let cfg = neck.config();
        let c = cfg.out_channels;
        let mut modules = Vec::new();
        let mut comparisons = Vec::new();
        let mut row = |name: String, n: usize| modules.push(ModuleRow { name, params: n });

        match &neck.laterals {
            Laterals::Galm(v) => {
                for (i, g) in v.iter().enumerate() {
                    let name = format!("galm.{}", i + 1);
                    let n = g.num_params();
                    comparisons.push(comparison(
                        name.clone(),
                        n,
                        "1x1 lateral conv",
                        cfg.in_channels[i] * c + c,
                    ));
                    row(name, n);
                }
            }
            Laterals::Plain(v) => {
                for (i, l) in v.iter().enumerate() {
                    row(format!("lateral.{}", i + 1), l.num_params());
                }
            }
        }
        for (i, s) in neck.spam.iter().enumerate() {
            let name = format!("spam.{}.stdds", i + 1);
            let n = s.stdds.num_params();
            comparisons.push(comparison(name.clone(), n, "3x3 stride-2 conv", 9 * c * c + c));
            row(name, n);
            row(
                format!("spam.{}.offset_head", i + 1),
                s.om1.num_params() + s.om2.num_params(),
            );
            row(
                format!("spam.{}.dcn", i + 1),
                s.dcn_w.numel() + s.dcn_b.numel(),
            );
        }
        for (i, s) in neck.seam.iter().enumerate() {
            let name = format!("seam.{}", i + 1);
            let n = s.num_params();
            comparisons.push(comparison(name.clone(), n, "1x1 conv", c * c + c));
            row(name, n);
        }
        for (i, o) in neck.out.iter().enumerate() {
            row(format!("out.{}", i + 1), o.num_params());
        }

        let mut variant_totals = Vec::new();
        for v in Variant::ALL {
            let params = if v == cfg.variant {
                neck.num_params()
            } else {
                let other = NeckConfig { variant: v, ..cfg.clone() };
                Neck::<f32>::build(&other)?.num_params()
            };
            variant_totals.push(VariantTotal { variant: v, params });
        }

        Ok(ParamCountReport {
            variant: cfg.variant,
            out_channels: c,
            total: neck.num_params(),
            modules,
            comparisons,
            variant_totals,
        })
    }
}

impl fmt::Display for ParamCountReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant {}  out_channels {}", self.variant, self.out_channels)?;
        writeln!(f)?;
        writeln!(f, "{:<24} {:>12}", "module", "params")?;
        for r in &self.modules {
            writeln!(f, "{:<24} {:>12}", r.name, r.params)?;
        }
        writeln!(f, "{:<24} {:>12}", "total", self.total)?;
        if !self.comparisons.is_empty() {
            writeln!(f)?;
            writeln!(
                f,
                "{:<16} {:>10}   {:<18} {:>10} {:>8}  smaller",
                "module", "params", "baseline", "params", "ratio"
            )?;
            for r in &self.comparisons {
                writeln!(
                    f,
                    "{:<16} {:>10}   {:<18} {:>10} {:>7.1}%  {}",
                    r.module,
                    r.params,
                    r.baseline,
                    r.baseline_params,
                    100.0 * r.ratio,
                    r.smaller
                )?;
            }
        }
        writeln!(f)?;
        for t in &self.variant_totals {
            writeln!(f, "total[{}] = {}", t.variant, t.params)?;
        }
        Ok(())
    }
}
