//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use bafpn::io::{load_checkpoint, load_config, save_checkpoint, RunConfig};
use bafpn::param::randomize_params;
use bafpn::pyramid::{Neck, NeckConfig};
use bafpn::seam::{seam_param_count, Seam};
use bafpn::spam::{space_to_depth, Stdds};
use bafpn::synth::run_alignment;
use bafpn::tensor::ops::{add, depth_to_space};
use bafpn::verify::{gradcheck_suite, oracle_suite, CheckClass, GradSuiteOptions, OracleRow};
use bafpn::{Module, ParamFactory, Tensor};

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(name: &str) -> RunConfig {
    load_config(configs().join(name)).expect("shipped config parses")
}

fn oracle_row<'a>(rows: &'a [OracleRow], name: &str) -> &'a OracleRow {
    rows.iter().find(|r| r.name == name).expect("oracle row present")
}

fn sine(shape: &[usize], phase: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|i| (i as f64 * 0.713 + phase).sin() * 2.0).collect(), shape).unwrap()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let rows = oracle_suite(60, 1);
    let r = oracle_row(&rows, "conv2d_vs_naive");
    let t = start.elapsed();
    check(
        r.cases >= 50 && r.max_abs_dev <= 1e-12 && t < Duration::from_secs(10),
        format!("{} conv cases, max |fast - naive| = {:.2e} (≤ 1e-12), {:.2?}", r.cases, r.max_abs_dev, t),
    )
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let rows = oracle_suite(60, 2);
    let zero = oracle_row(&rows, "deform_zero_offsets_vs_conv2d");
    let shift = oracle_row(&rows, "deform_integer_shift");
    let t = start.elapsed();
    check(
        zero.max_abs_dev <= 1e-10 && shift.max_abs_dev <= 1e-12 && t < Duration::from_secs(10),
        format!(
            "zero offsets vs conv2d {:.2e} (≤ 1e-10), integer shifts {:.2e} (≤ 1e-12) over {} cases, {:.2?}",
            zero.max_abs_dev, shift.max_abs_dev, shift.cases, t
        ),
    )
}

fn criterion_3() -> Verdict {
    let mut problems = Vec::new();

    let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
    if space_to_depth(&x).unwrap().data() != [1.0, 2.0, 3.0, 4.0] {
        problems.push("2x2 block".to_string());
    }

    let plane: Vec<f64> = (0..16).map(f64::from).collect();
    let x = Tensor::from_vec(plane.clone(), &[1, 1, 4, 4]).unwrap();
    let s = space_to_depth(&x).unwrap();
    for (phase, (r0, c0)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
        let mut expect = Vec::new();
        for r in (r0..4).step_by(2) {
            for c in (c0..4).step_by(2) {
                expect.push(plane[r * 4 + c]);
            }
        }
        if s.data()[phase * 4..][..4] != expect[..] {
            problems.push(format!("4x4 phase ({r0},{c0})"));
        }
    }

    let shape = [2, 3, 6, 8];
    let n: usize = shape.iter().product();
    let x = Tensor::from_vec((0..n).map(|i| i as f64).collect(), &shape).unwrap();
    let s = space_to_depth(&x).unwrap();
    let mut hits = vec![0u8; n];
    for v in s.data() {
        hits[*v as usize] += 1;
    }
    if hits.iter().any(|&h| h != 1) {
        problems.push("partition".into());
    }
    let random = sine(&shape, 0.3);
    let back = depth_to_space(&space_to_depth(&random).unwrap()).unwrap();
    let bitwise = back.data().iter().zip(random.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    if !bitwise {
        problems.push("inverse scatter".into());
    }
    if problems.is_empty() {
        Ok(format!(
            "hand-enumerated 2x2/4x4 phases match 0:H:2 indexing, {n} elements each covered once, inverse bitwise"
        ))
    } else {
        Err(format!("mismatches: {}", problems.join(", ")))
    }
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let rows = gradcheck_suite(GradSuiteOptions {
        seed: 7,
        ..GradSuiteOptions::default()
    });
    let t = start.elapsed();
    let worst = |class: CheckClass| {
        rows.iter()
            .filter(|r| r.class == class)
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    };
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    let has_neck = rows.iter().any(|r| r.name == "neck.bafpn" && r.pass);
    check(
        failed.is_empty() && has_neck && t < Duration::from_secs(120),
        format!(
            "{}/{} cases, worst smooth {:.1e} (≤ 1e-7), piecewise {:.1e} / module {:.1e} (≤ 1e-5), block+neck {:.1e} (≤ 1e-4), {:.2?}{}",
            rows.len() - failed.len(),
            rows.len(),
            worst(CheckClass::Smooth),
            worst(CheckClass::Piecewise),
            worst(CheckClass::Module),
            worst(CheckClass::Block),
            t,
            if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
        ),
    )
}

fn criterion_5() -> Verdict {
    let m = Seam::<f64>::new(&mut ParamFactory::new(5), "seam", 8, 16);
    let (f_hat, f) = (sine(&[2, 8, 6, 6], 0.0), sine(&[2, 8, 6, 6], 1.7));
    let fused = m.fuse(&f_hat, &f).unwrap();
    let plain = add(&f_hat, &f).unwrap();
    let gate = m.gate(&f_hat, &f).unwrap();
    let k = m.saliency().item().unwrap();
    let exact = fused.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    let unit_gain = gate.data().iter().all(|g| g + k == 1.0);
    check(
        exact && unit_gain,
        format!("zero-initialised SEAM: gain {} everywhere, fused == F_hat + F bitwise on {} elements", 0.5 + k, fused.numel()),
    )
}

fn criterion_6() -> Verdict {
    let c = 256;
    let seam = seam_param_count(c, NeckConfig::DEFAULT_ATTN_REDUCTION);
    let mut f = ParamFactory::new(0);
    let built_seam = Seam::<f32>::new(&mut f, "seam", c, NeckConfig::DEFAULT_ATTN_REDUCTION).num_params();
    let stdds = Stdds::<f32>::new(&mut f, "stdds", c, NeckConfig::DEFAULT_ATTN_KERNEL, NeckConfig::DEFAULT_ATTN_REDUCTION)
        .unwrap()
        .num_params();
    let (pointwise, strided) = (c * c + c, 9 * c * c + c);
    check(
        seam == built_seam && seam < pointwise && stdds < strided,
        format!(
            "C=256: SEAM {seam} < {pointwise} (1x1 conv); STDDS {stdds} < {strided} (3x3 s2 conv), ratio {:.1}% (46% stated, not asserted)",
            100.0 * stdds as f64 / strided as f64
        ),
    )
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let cfg = config("synth_align.json");
    let e = &cfg.experiment;
    let shape_ok = cfg.neck.levels == 2
        && cfg.neck.out_channels == 8
        && e.base_hw == 64
        && e.shift_px == [0.0, 2.0]
        && e.steps == 200
        && e.optimizer == bafpn::io::OptimizerKind::Adam;
    let (run, _) = run_alignment::<f32>(&cfg, 7, false, |_| Ok(())).map_err(|e| e.to_string())?;
    let control_cfg = config("synth_control.json");
    let (control, _) = run_alignment::<f32>(&control_cfg, 7, false, |_| Ok(())).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let regress = control.final_align_err / control.initial_align_err;
    check(
        shape_ok
            && run.loss_ratio() <= 0.5
            && run.oracle_max_abs() <= 1e-6
            && regress <= 1.1
            && t < Duration::from_secs(300),
        format!(
            "shift (0,2): MSE {:.3e} -> {:.3e} (x{:.4}, ≤ 0.5); oracle {:.1e} (≤ 1e-6); control x{:.4} (≤ 1.1); {:.2?}",
            run.initial_loss,
            run.final_loss,
            run.loss_ratio(),
            run.oracle_max_abs(),
            regress,
            t
        ),
    )
}

fn synth_align_cli(out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_bafpn"))
        .args(["synth-align", "--config"])
        .arg(configs().join("synth_align.json"))
        .arg("--out")
        .arg(out)
        .args(["--seed", "7"])
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn criterion_8() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    synth_align_cli(&a)?;
    synth_align_cli(&b)?;
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let lines = ba.iter().filter(|&&c| c == b'\n').count();

    let cfg = NeckConfig {
        out_channels: 16,
        seed: 7,
        ..NeckConfig::new(vec![8, 16, 32])
    };
    let mut src = Neck::<f32>::build(&cfg).unwrap();
    randomize_params(&mut src, 70, 0.3);
    let path = dir.path().join("neck.bafp");
    save_checkpoint(&path, &src).unwrap();
    let mut dst = Neck::<f32>::build(&NeckConfig { seed: 8, ..cfg.clone() }).unwrap();
    load_checkpoint(&path).unwrap().apply(&mut dst).unwrap();
    let xs: Vec<Tensor<f32>> = cfg
        .in_channels
        .iter()
        .enumerate()
        .map(|(i, &c)| sine(&[2, c, 16 >> i, 16 >> i], i as f64).cast())
        .collect();
    let (ya, yb) = (src.forward(&xs).unwrap(), dst.forward(&xs).unwrap());
    let same_forward = ya
        .iter()
        .zip(&yb)
        .all(|(p, q)| p.data().iter().zip(q.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    check(
        ba == bb && lines == 200 && same_forward,
        format!(
            "two `synth-align --seed 7` runs: {} bytes / {lines} lines, identical {}; checkpoint reload forward bitwise {}",
            ba.len(),
            ba == bb,
            same_forward
        ),
    )
}

fn criterion_9(earlier: &[bool]) -> Verdict {
    check(
        earlier.iter().all(|&ok| ok),
        "detection benchmarks (DOTA mAP / AP75 tables and ablations) need full detector training and are out of \
         scope; criteria 1-8 stand in for them"
            .to_string(),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("oracle equivalence (conv2d)", criterion_1),
        ("DCN degeneracy", criterion_2),
        ("space-to-depth losslessness", criterion_3),
        ("gradient suite", criterion_4),
        ("zero-init baseline equivalence", criterion_5),
        ("parameter-count claims", criterion_6),
        ("synthetic alignment recovery", criterion_7),
        ("reproducibility", criterion_8),
    ];
    let mut results = Vec::new();
    let report = |n: usize, title: &str, v: Verdict| {
        let (tag, detail, ok) = match v {
            Ok(d) => ("PASS", d, true),
            Err(d) => ("FAIL", d, false),
        };
        println!("criterion {n} {tag} {title}: {detail}");
        ok
    };
    for (i, (title, f)) in criteria.iter().enumerate() {
        let ok = report(i + 1, title, f());
        results.push(ok);
    }
    let ok9 = report(9, "non-reproducible results scoped out", criterion_9(&results));
    results.push(ok9);
    if results.iter().all(|&ok| ok) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
