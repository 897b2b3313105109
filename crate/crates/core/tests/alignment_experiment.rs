use std::path::PathBuf;

use bafpn::io::{load_config, MetricsRecord};
use bafpn::pyramid::Variant;
use bafpn::synth::run_alignment;

fn config(name: &str) -> bafpn::io::RunConfig {
    load_config(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

#[test]
fn shifted_pyramid_is_realigned_and_control_does_not_regress() {
    let cfg = config("synth_align.json");
    let mut records: Vec<MetricsRecord> = Vec::new();
    let run = run_alignment::<f32>(&cfg, 7, false, |r| {
        records.push(r.clone());
        Ok(())
    })
    .unwrap().0;
    assert_eq!(records.len(), cfg.experiment.steps);
    assert!(records.windows(2).all(|w| w[0].step < w[1].step));
    assert!(records.iter().all(|r| r.wall_ms == 0.0));
    assert_eq!(records[0].loss as f32, run.initial_loss as f32);
    assert!(run.loss_ratio() <= 0.5, "{run:?}");
    assert!(run.oracle_max_abs() <= 1e-6, "{run:?}");

    let control = config("synth_control.json");
    assert_eq!(control.experiment.shift_px, [0.0, 0.0]);
    let c = run_alignment::<f32>(&control, 7, false, |_| Ok(())).unwrap().0;
    assert!(c.final_align_err <= 1.1 * c.initial_align_err, "{c:?}");
    assert_eq!(c.oracle_max_abs(), 0.0);
}

#[test]
fn fpn_comparison_sees_identical_data() {
    let mut cfg = config("synth_align.json");
    cfg.experiment.steps = 40;
    let bafpn = run_alignment::<f32>(&cfg, 3, false, |_| Ok(())).unwrap().0;
    cfg.neck.variant = Variant::Fpn;
    let fpn = run_alignment::<f32>(&cfg, 3, false, |_| Ok(())).unwrap().0;
    assert_eq!(fpn.variant, Variant::Fpn);
    assert!(bafpn.final_loss.is_finite() && fpn.final_loss.is_finite());
    assert_eq!(bafpn.oracle, fpn.oracle);
}
