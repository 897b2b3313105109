use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use bafpn::io::{load_config, save_checkpoint, MetricsWriter, RunConfig};
use bafpn::pyramid::{Neck, NeckConfig, Variant};
use bafpn::synth::{run_alignment, AlignmentRun};
use bafpn::verify::{gradcheck_suite, oracle_suite, GradSuiteOptions};
use bafpn::{DType, Element, Tensor};

use crate::table::{render, sci};

fn config(path: &Path) -> Result<RunConfig> {
    load_config(path).with_context(|| format!("loading {}", path.display()))
}

pub fn gradcheck(seed: u64, eps: f64, tol: Option<f64>, json: bool) -> Result<bool> {
    let start = Instant::now();
    let rows = gradcheck_suite(GradSuiteOptions { seed, eps, tol });
    let elapsed = start.elapsed().as_secs_f64();
    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.name.clone(),
                    format!("{:?}", r.class).to_lowercase(),
                    sci(r.h),
                    sci(r.max_rel_err),
                    sci(r.tol),
                    r.coords.to_string(),
                    r.draws.to_string(),
                    if r.pass { "ok" } else { "FAIL" }.to_string(),
                ]
            })
            .collect();
        print!(
            "{}",
            render(&["case", "class", "h", "max_rel_err", "tol", "coords", "draws", "status"], &body)
        );
    }
    let failed: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
    for r in &failed {
        match (&r.error, r.worst) {
            (Some(e), _) => eprintln!("FAIL {}: {e}", r.name),
            (None, Some((input, coord, a, n))) => eprintln!(
                "FAIL {}: max_rel_err {:.3e} > {:.1e} at input {input} coordinate {coord} (analytic {a:.9e}, numeric {n:.9e}); stencil crossings {}",
                r.name, r.max_rel_err, r.tol, r.stencil_crossings
            ),
            (None, None) => eprintln!("FAIL {}: no coordinates checked", r.name),
        }
    }
    println!(
        "gradcheck seed={seed}: {}/{} passed in {elapsed:.2}s",
        rows.len() - failed.len(),
        rows.len()
    );
    Ok(failed.is_empty())
}

pub fn oracle(trials: usize, seed: u64, json: bool) -> Result<bool> {
    let rows = oracle_suite(trials, seed);
    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.name.clone(),
                    r.cases.to_string(),
                    sci(r.max_abs_dev),
                    sci(r.tol),
                    if r.pass { "ok" } else { "FAIL" }.to_string(),
                ]
            })
            .collect();
        print!("{}", render(&["check", "cases", "max_abs_dev", "tol", "status"], &body));
    }
    let mut ok = true;
    for r in rows.iter().filter(|r| !r.pass) {
        eprintln!(
            "FAIL {}: max abs deviation {:.3e} exceeds {:.1e} over {} cases",
            r.name, r.max_abs_dev, r.tol, r.cases
        );
        ok = false;
    }
    Ok(ok)
}

pub fn param_count(path: &Path, json: bool) -> Result<bool> {
    let cfg = config(path)?;
    let report = Neck::<f32>::build(&cfg.neck)?.param_count_report()?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(true);
    }
    println!(
        "variant {}  C_out {}  total {}",
        report.variant.as_str(),
        report.out_channels,
        report.total
    );
    let modules: Vec<Vec<String>> = report
        .modules
        .iter()
        .map(|m| vec![m.name.clone(), m.params.to_string()])
        .collect();
    print!("{}", render(&["module", "params"], &modules));
    println!();
    let comparisons: Vec<Vec<String>> = report
        .comparisons
        .iter()
        .map(|c| {
            vec![
                c.module.clone(),
                c.params.to_string(),
                c.baseline.clone(),
                c.baseline_params.to_string(),
                format!("{:.3}", c.ratio),
                if c.smaller { "yes" } else { "no" }.to_string(),
            ]
        })
        .collect();
    print!(
        "{}",
        render(&["module", "params", "baseline", "baseline_params", "ratio", "smaller"], &comparisons)
    );
    println!();
    let totals: Vec<Vec<String>> = report
        .variant_totals
        .iter()
        .map(|v| vec![v.variant.as_str().to_string(), v.params.to_string()])
        .collect();
    print!("{}", render(&["variant", "params"], &totals));
    Ok(true)
}

pub struct SynthArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub wall_clock: bool,
    pub compare_fpn: bool,
    pub checkpoint: Option<PathBuf>,
}

fn train<T: Element>(cfg: &RunConfig, args: &SynthArgs, seed: u64) -> Result<(AlignmentRun, Option<AlignmentRun>)> {
    let mut writer = MetricsWriter::create(&args.out)?;
    let (run, neck) = run_alignment::<T>(cfg, seed, args.wall_clock, |r| writer.write(r))?;
    writer.finish()?;
    if let Some(path) = &args.checkpoint {
        save_checkpoint(path, &neck)?;
    }
    let fpn = if args.compare_fpn && cfg.neck.variant != Variant::Fpn {
        let mut fpn_cfg = cfg.clone();
        fpn_cfg.neck.variant = Variant::Fpn;
        Some(run_alignment::<T>(&fpn_cfg, seed, false, |_| Ok(()))?.0)
    } else {
        None
    };
    Ok((run, fpn))
}

pub fn synth_align(args: SynthArgs) -> Result<bool> {
    let mut cfg = config(&args.config)?;
    if let Some(steps) = args.steps {
        cfg.experiment.steps = steps;
    }
    let seed = args.seed.unwrap_or(cfg.neck.seed);
    let start = Instant::now();
    let (run, fpn) = match cfg.neck.dtype {
        DType::Float32 => train::<f32>(&cfg, &args, seed)?,
        DType::Float64 => train::<f64>(&cfg, &args, seed)?,
    };
    let mut line = format!(
        "summary variant={} seed={} steps={} initial_loss={:.6e} final_loss={:.6e} ratio={:.4} \
         initial_align_err={:.6e} final_align_err={:.6e} oracle_max_abs={:.3e}",
        run.variant.as_str(),
        run.seed,
        run.steps,
        run.initial_loss,
        run.final_loss,
        run.loss_ratio(),
        run.initial_align_err,
        run.final_align_err,
        run.oracle_max_abs(),
    );
    if let Some(f) = &fpn {
        line.push_str(&format!(
            " fpn_final_align_err={:.6e} fpn_gap={:.6e}",
            f.final_align_err,
            f.final_align_err - run.final_align_err
        ));
    }
    line.push_str(&format!(" elapsed_s={:.2}", start.elapsed().as_secs_f64()));
    println!("{line}");
    Ok(true)
}

fn bench_inputs<T: Element>(cfg: &NeckConfig, batch: usize, base_hw: usize, seed: u64) -> Result<Vec<Tensor<T>>> {
    cfg.in_channels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let s = base_hw >> i;
            let n = batch * c * s * s;
            let phase = seed as f64 * 0.1 + i as f64;
            let data = (0..n).map(|k| T::from_f64((k as f64 * 0.731 + phase).sin())).collect();
            Ok(Tensor::from_vec(data, &[batch, c, s, s])?)
        })
        .collect()
}

fn time_forward<T: Element>(cfg: &RunConfig, repeat: usize, seed: u64) -> Result<Vec<f64>> {
    let neck_cfg = NeckConfig { seed, ..cfg.neck.clone() };
    let neck = Neck::<T>::build(&neck_cfg)?;
    let xs = bench_inputs::<T>(&neck_cfg, cfg.experiment.batch, cfg.experiment.base_hw, seed)?;
    neck.forward(&xs)?;
    (0..repeat)
        .map(|_| {
            let t = Instant::now();
            neck.forward(&xs)?;
            Ok(t.elapsed().as_secs_f64() * 1e3)
        })
        .collect()
}

pub fn forward_bench(path: &Path, repeat: usize, seed: Option<u64>) -> Result<bool> {
    anyhow::ensure!(repeat > 0, "--repeat must be positive");
    let cfg = config(path)?;
    let seed = seed.unwrap_or(cfg.neck.seed);
    let times = match cfg.neck.dtype {
        DType::Float32 => time_forward::<f32>(&cfg, repeat, seed)?,
        DType::Float64 => time_forward::<f64>(&cfg, repeat, seed)?,
    };
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times.len() as f64;
    println!(
        "forward variant={} levels={} base_hw={} batch={} dtype={} repeat={repeat} mean_ms={mean:.3} std_ms={:.3}",
        cfg.neck.variant.as_str(),
        cfg.neck.levels,
        cfg.experiment.base_hw,
        cfg.experiment.batch,
        cfg.neck.dtype,
        var.sqrt()
    );
    Ok(true)
}
