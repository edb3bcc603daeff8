use super::selftest::{run_all, suite_names, SelftestOptions};
use super::*;

fn lenet() -> ExperimentConfig {
    ExperimentConfig::preset("lenet-hcnn", false).unwrap()
}

#[test]
fn overrides_set_nested_keys_and_aliases() {
    let c = lenet()
        .with_overrides(&[
            "train.optimizer.lr=0.01",
            "K=-2",
            "model.layers.1.out_channels=8",
            "train.lr_drop_epochs=[3, 6]",
            "precision=64",
            "data.train_limit=100",
        ])
        .unwrap();
    assert_eq!(c.train.optimizer.lr, 0.01);
    assert_eq!(c.model.curvature.k(), -2.0);
    assert_eq!(c.train.lr_drop_epochs, vec![3, 6]);
    assert_eq!(c.precision, Precision::F64);
    assert_eq!(c.data.train_limit, Some(100));
    let sgd = lenet().with_overrides(&["train.optimizer.kind=sgd"]).unwrap();
    assert_eq!(sgd.train.optimizer.kind, crate::training::OptimizerKind::Sgd);
}

#[test]
fn overrides_reject_unknown_keys_and_bad_types() {
    let cases = [
        ("train.epochz=3", "unknown config key `train.epochz`"),
        ("model.layers.99.kernel=3", "unknown config key `model.layers.99`"),
        ("train.epochs.x=1", "unknown config key `train.epochs.x`"),
        ("train.epochs=many", "invalid type"),
        ("precision=16", "precision must be 32 or 64"),
        ("K=0.5", "curvature must be negative"),
        ("model.layers.1.out_channels=7", "expects"),
        ("data.source=cifar", "unknown variant"),
        ("noequals", "key=value"),
    ];
    for (o, want) in cases {
        let e = lenet().with_overrides(&[o]).unwrap_err();
        assert!(e.to_string().contains(want), "{o}: {e}");
        assert_eq!(exit_code(&e), exit::CONFIG, "{o}");
    }
}

#[test]
fn config_files_are_strict() {
    let mut v = serde_json::to_value(lenet()).unwrap();
    v["train"]["optimizer"]["momentun"] = 0.9.into();
    let e = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
    assert!(e.to_string().contains("momentun"), "{e}");
    let text = lenet().to_json();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap(), lenet());
    // a model that does not fit the data source
    let e = lenet().with_overrides(&["data.source=mixture"]).unwrap_err();
    assert!(e.to_string().contains("data source"), "{e}");
}

#[test]
fn digest_tracks_every_effective_value() {
    let base = lenet();
    let same = base.with_overrides::<&str>(&[]).unwrap();
    assert_eq!(base.digest(), same.digest());
    for o in ["train.optimizer.lr=0.002", "train.seed=1", "K=-0.5", "precision=64", "data.test_limit=10"] {
        assert_ne!(base.digest(), base.with_overrides(&[o]).unwrap().digest(), "{o}");
    }
    // setting a value to what it already is changes nothing
    assert_eq!(base.digest(), base.with_overrides(&["train.epochs=10"]).unwrap().digest());
}

#[test]
fn sweep_specs_parse() {
    let (k, v) = parse_sweep("K=-0.5,-1, -2").unwrap();
    assert_eq!(k, "K");
    assert_eq!(v, ["-0.5", "-1", "-2"]);
    assert!(parse_sweep("K=").is_err());
    assert!(parse_sweep("-1,-2").is_err());
}

#[test]
fn exit_codes_are_stable() {
    assert_eq!(exit_code(&Error::DatasetMissing("x".into())), 2);
    let nf = Error::NonFiniteLoss {
        epoch: 1,
        batch: 0,
        norms: String::new(),
    };
    assert_eq!(exit_code(&nf), 3);
    assert_eq!(exit_code(&Error::Config("x".into())), 4);
    assert_eq!(exit_code(&Error::CheckpointChecksum), 1);
}

#[test]
fn missing_dataset_leaves_no_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        out: dir.path().join("runs"),
        data_dir: Some(dir.path().join("nowhere")),
    };
    let e = train_run(&lenet(), &opts).unwrap_err();
    assert_eq!(exit_code(&e), exit::MISSING_DATASET, "{e}");
    assert!(!opts.out.exists());
}

#[test]
fn mixture_run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::preset("mlr-only", false).unwrap().with_overrides(&["epochs=5"]).unwrap();
    let opts = RunOptions {
        out: dir.path().to_path_buf(),
        data_dir: None,
    };
    let o = train_run(&cfg, &opts).unwrap();
    let name = o.dir.file_name().unwrap().to_str().unwrap().to_string();
    assert!(name.ends_with(&cfg.digest()[..12]), "{name}");
    for f in ["config.json", "metrics.csv", "summary.json", "model.ckpt"] {
        assert!(o.dir.join(f).is_file(), "{f}");
    }
    assert_eq!(ExperimentConfig::load(&o.dir.join("config.json")).unwrap(), cfg);
    let s: Summary = serde_json::from_str(&std::fs::read_to_string(o.dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s, o.summary);
    assert_eq!(s.config_digest, cfg.digest());

    let r = eval_run(&o.dir, None, None).unwrap();
    assert_eq!(r.test_acc, s.final_test_acc);
    assert_eq!(r.test_loss, s.final_test_loss);

    // the same config again gets its own directory
    let again = train_run(&cfg, &opts).unwrap();
    assert_ne!(again.dir, o.dir);
}

#[test]
fn selftest_lists_the_suites_and_passes() {
    let names = suite_names();
    assert!(names.len() >= 7);
    for n in ["minkowski-inner", "exp-log", "transport", "centroid", "hyperplane", "conv-oracle", "batch-norm"] {
        assert!(names.contains(&n), "{n}");
    }
    let reports = run_all(&SelftestOptions {
        scale: 0.1,
        ..Default::default()
    });
    assert!(reports.iter().all(|r| r.passed()), "{reports:?}");
}

/// Minkowski product with the time term's sign flipped.
fn flipped_inner(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[test]
fn selftest_catches_a_flipped_inner_product() {
    let reports = run_all(&SelftestOptions {
        inner: flipped_inner,
        scale: 0.1,
        ..Default::default()
    });
    let inner = reports.iter().find(|r| r.name == "minkowski-inner").unwrap();
    assert!(!inner.passed());
    let f = inner.first.as_ref().unwrap();
    assert!(f.message.contains("<x,x>") || f.message.contains("<o,o>"), "{}", f.message);
    // the failure replays from its seed
    let replay = run_all(&SelftestOptions {
        inner: flipped_inner,
        seed: 0,
        scale: 0.1,
    });
    assert_eq!(replay[0].first, inner.first);
    assert!(reports.iter().filter(|r| r.name != "minkowski-inner").all(|r| r.passed()));
}

#[test]
fn gradcheck_report_passes_and_fails_on_demand() {
    let rows = gradcheck_preset("lenet-hcnn", 1e-4, 2, 0).unwrap();
    assert!(rows.iter().all(|r| r.passed), "{rows:?}");
    assert_eq!(rows.last().unwrap().layer, "model");
    let strict = gradcheck_preset("lenet-hcnn", 1e-12, 2, 0).unwrap();
    assert!(strict.iter().any(|r| !r.passed));

    let mut buf = Vec::new();
    write_gradcheck_csv(&rows, &mut buf).unwrap();
    let mut r = csv::Reader::from_reader(buf.as_slice());
    let parsed: Vec<GradcheckRow> = r.deserialize().map(|x| x.unwrap()).collect();
    assert_eq!(parsed.len(), rows.len());
    assert_eq!(parsed[1].layer, rows[1].layer);
}
