use std::path::PathBuf;

use bafpn::io::{
    load_checkpoint, load_config, parse_config, parse_metrics, save_checkpoint, Checkpoint, MetricsRecord, MetricsWriter,
    OptimizerKind,
};
use bafpn::param::randomize_params;
use bafpn::pyramid::{Neck, NeckConfig, Upsample, Variant};
use bafpn::{Error, Module, Tensor};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config_key(err: Error) -> String {
    match err {
        Error::Config { key, .. } => key,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn minimal_document_fills_defaults() {
    let cfg = parse_config(r#"{"levels":2,"in_channels":[8,16]}"#).unwrap();
    assert_eq!(cfg.neck.out_channels, 256);
    assert_eq!(cfg.neck.galm_groups, 4);
    assert_eq!(cfg.neck.attn_kernel, 7);
    assert_eq!(cfg.neck.attn_reduction, 16);
    assert_eq!(cfg.neck.variant, Variant::Bafpn);
    assert_eq!(cfg.neck.upsample, Upsample::Nearest);
    assert!(cfg.neck.output_convs);
    assert_eq!(cfg.experiment.base_hw, 64);
    assert_eq!(cfg.experiment.steps, 200);
    assert_eq!(cfg.experiment.optimizer, OptimizerKind::Adam);
}

#[test]
fn indivisible_groups_name_the_level() {
    let err = parse_config(r#"{"levels":2,"in_channels":[8,16],"galm_groups":3}"#).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("level 1"), "{msg}");
    assert_eq!(config_key(err), "galm_groups");
}

#[test]
fn unknown_variant_lists_the_allowed_ones() {
    let err = parse_config(r#"{"levels":2,"in_channels":[8,16],"variant":"pafpn"}"#).unwrap_err();
    let msg = err.to_string();
    for v in Variant::ALL {
        assert!(msg.contains(v.as_str()), "{msg}");
    }
    assert_eq!(config_key(err), "variant");
}

#[test]
fn unknown_and_mistyped_keys_are_rejected() {
    let err = parse_config(r#"{"in_channels":[8,8],"experiment":{"stpes":3}}"#).unwrap_err();
    assert_eq!(config_key(err), "experiment.stpes");
    let err = parse_config(r#"{"in_channels":[8,"wide"]}"#).unwrap_err();
    assert_eq!(config_key(err), "in_channels[1]");
}

#[test]
fn shipped_configs_parse() {
    let mut names: Vec<_> = std::fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    assert!(names.len() >= 3);
    for p in names {
        load_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    let synth = load_config(configs_dir().join("synth_align.json")).unwrap();
    assert_eq!(synth.neck.levels, 2);
    assert_eq!(synth.neck.out_channels, 8);
    assert_eq!(synth.experiment.shift_px, [0.0, 2.0]);
}

fn pyramid_inputs(cfg: &NeckConfig, hw: usize) -> Vec<Tensor<f32>> {
    cfg.in_channels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let s = hw >> i;
            let n = 2 * c * s * s;
            Tensor::from_vec((0..n).map(|k| ((k as f32) * 0.37).sin()).collect(), &[2, c, s, s]).unwrap()
        })
        .collect()
}

#[test]
fn checkpoint_reproduces_forward_outputs_bitwise() {
    for variant in Variant::ALL {
        let cfg = NeckConfig {
            out_channels: 8,
            variant,
            seed: 3,
            ..NeckConfig::new(vec![4, 8, 8])
        };
        let mut trained = Neck::<f32>::build(&cfg).unwrap();
        randomize_params(&mut trained, 11, 0.2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("neck.bafp");
        save_checkpoint(&path, &trained).unwrap();

        let mut fresh = Neck::<f32>::build(&NeckConfig { seed: 99, ..cfg.clone() }).unwrap();
        load_checkpoint(&path).unwrap().apply(&mut fresh).unwrap();

        let xs = pyramid_inputs(&cfg, 16);
        let a = trained.forward(&xs).unwrap();
        let b = fresh.forward(&xs).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            let bits_a: Vec<u32> = pa.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = pb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{variant:?}");
        }
        assert_eq!(Checkpoint::from_module(&fresh), Checkpoint::from_module(&trained));
    }
}

#[test]
fn checkpoint_from_another_variant_is_a_name_error() {
    let cfg = NeckConfig {
        out_channels: 4,
        ..NeckConfig::new(vec![4, 4])
    };
    let bafpn = Neck::<f64>::build(&cfg).unwrap();
    let mut fpn = Neck::<f64>::build(&NeckConfig {
        variant: Variant::Fpn,
        ..cfg
    })
    .unwrap();
    let before = Checkpoint::from_module(&fpn);
    let err = Checkpoint::from_module(&bafpn).apply(&mut fpn).unwrap_err();
    assert!(matches!(err, Error::Name(_)), "{err}");
    assert_eq!(Checkpoint::from_module(&fpn), before);
    assert!(fpn.num_params() > 0);
}

#[test]
fn metrics_stream_round_trips() {
    let mut w = MetricsWriter::new(Vec::new());
    for step in 0..5u64 {
        let mut rec = MetricsRecord::new(step, 1.0 / (step + 1) as f64, 0.1 * step as f64);
        rec.extra.insert("mse_level_2".into(), 0.5);
        w.write(&rec).unwrap();
    }
    let text = String::from_utf8(w.finish().unwrap()).unwrap();
    assert_eq!(text.lines().count(), 5);
    let back = parse_metrics(&text).unwrap();
    assert!(back.windows(2).all(|p| p[0].step < p[1].step));
    assert_eq!(back[3].loss, 0.25);

    let mut w = MetricsWriter::new(Vec::new());
    assert!(w.write(&MetricsRecord::new(0, f64::NAN, 0.0)).is_err());
}
