use super::*;

fn shipped() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

#[test]
fn mixture_points_are_on_manifold_and_deterministic() {
    for k in [-0.2, -0.5, -1.0, -2.0] {
        let spec = MixtureSpec {
            dim: 3,
            classes: 4,
            per_class: 50,
            spread: 0.5,
            curvature: Curvature::new(k).unwrap(),
            seed: 3,
            ..Default::default()
        };
        let ds = wrapped_mixture(&spec).unwrap();
        assert_eq!(ds.inputs.shape(), &[200, 4]);
        let m = Lorentz::new(spec.curvature);
        m.check_point(&ds.inputs, 1e-10).unwrap();
        assert_eq!(ds, wrapped_mixture(&spec).unwrap());
        assert!(ds.labels.iter().all(|&l| l < 4));

        // neighbouring means are exactly `separation` apart
        let means = spec.means().unwrap();
        let tape = Tape::inference();
        let p = tape.constant(means);
        let d = m.distance(p.narrow(0, 0, 1).unwrap(), p.narrow(0, 1, 1).unwrap()).unwrap().item();
        assert!((d - 4.0).abs() < 1e-9, "{d}");
    }
}

#[test]
fn zero_spread_collapses_to_means() {
    let spec = MixtureSpec {
        spread: 0.0,
        per_class: 5,
        ..Default::default()
    };
    let ds = wrapped_mixture(&spec).unwrap();
    let means = spec.means().unwrap();
    for (row, &l) in ds.inputs.data().chunks(3).zip(&ds.labels) {
        let mu = &means.data()[l * 3..l * 3 + 3];
        for (a, b) in row.iter().zip(mu) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn nearest_mean_separates_the_reference_mixture() {
    let spec = MixtureSpec {
        per_class: 500,
        seed: 11,
        ..Default::default()
    };
    let ds = wrapped_mixture(&spec).unwrap();
    let pred = nearest_mean_predict(&ds.inputs, &spec.means().unwrap(), spec.curvature).unwrap();
    assert_eq!(pred, ds.labels);
}

#[test]
fn invalid_mixtures_are_rejected() {
    for bad in [
        MixtureSpec { dim: 1, ..Default::default() },
        MixtureSpec { classes: 1, ..Default::default() },
        MixtureSpec { per_class: 0, ..Default::default() },
        MixtureSpec { spread: -0.1, ..Default::default() },
        MixtureSpec { separation: 0.0, ..Default::default() },
    ] {
        assert!(wrapped_mixture(&bad).is_err(), "{bad:?}");
    }
}

#[test]
fn split_shuffle_batch() {
    let ds = Dataset::new(Tensor::from_fn(&[10, 2], |i| i as f64), (0..10).map(|i| i % 3).collect(), 3).unwrap();
    let parts = ds.split(&[0.8, 0.2], 1).unwrap();
    assert_eq!((parts[0].len(), parts[1].len()), (8, 2));
    assert!(ds.split(&[0.8, 0.3], 1).is_err());
    assert_eq!(permutation(10, 4), permutation(10, 4));
    assert_ne!(permutation(100, 4), permutation(100, 5));

    let mut seen = vec![0; 10];
    let batches = ds.batches(3, Some(9)).unwrap();
    assert_eq!(batches.num_batches(), 4);
    for b in batches {
        let (x, y) = b.unwrap();
        for (row, &l) in x.data().chunks(2).zip(&y) {
            let i = row[0] as usize / 2;
            assert_eq!(l, i % 3);
            seen[i] += 1;
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
    assert!(ds.batches(0, None).is_err());
    assert!(Dataset::new(Tensor::<f64>::zeros(&[2, 2]), vec![0, 5], 3).is_err());
}

#[test]
fn manifold_features_are_space_components() {
    let ds = wrapped_mixture(&MixtureSpec::default()).unwrap();
    let f = ds.features().unwrap();
    assert_eq!(f.shape(), &[200, 2]);
    assert_eq!(ds.feature_shape(), vec![2]);
    assert_eq!(f.data()[..2], ds.inputs.data()[1..3]);
}

#[test]
fn shipped_mnist_headers_and_round_trip() {
    let (img, lab) = mnist_paths(&shipped(), MnistSplit::Train);
    let ds = load_idx::<f32>(&img, &lab).unwrap();
    assert_eq!(ds.inputs.shape(), &[8000, 28, 28, 1]);
    assert!(ds.labels.iter().all(|&l| l < 10));
    assert!(ds.inputs.data().iter().all(|&p| (0.0..=1.0).contains(&p)));

    let (ei, el) = encode_idx(&ds).unwrap();
    assert_eq!(ei, read_maybe_gz(&img).unwrap());
    assert_eq!(el, read_maybe_gz(&lab).unwrap());

    let test = load_mnist::<f32>(&shipped(), MnistSplit::Test).unwrap();
    assert_eq!(test.len(), 2000);
}

#[test]
fn idx_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let ds = Dataset::new(Tensor::from_fn(&[3, 2, 2, 1], |i| (i % 256) as f64 / 255.0), vec![1, 2, 3], 10).unwrap();
    let (img, lab) = (dir.path().join("i.gz"), dir.path().join("l"));
    write_idx(&ds, &img, &lab).unwrap();
    assert_eq!(load_idx::<f64>(&img, &lab).unwrap(), ds);

    // swapped files: bad magic
    let e = load_idx::<f64>(&lab, &img).unwrap_err();
    assert!(matches!(e, Error::IdxMagic { .. }), "{e}");

    // truncated payload
    let raw = std::fs::read(&lab).unwrap();
    let cut = dir.path().join("cut");
    std::fs::write(&cut, &raw[..raw.len() - 1]).unwrap();
    let e = load_idx::<f64>(&img, &cut).unwrap_err();
    assert!(matches!(e, Error::IdxTruncated { .. }), "{e}");

    // truncated gzip stream
    let raw = std::fs::read(&img).unwrap();
    let cutgz = dir.path().join("cut.gz");
    std::fs::write(&cutgz, &raw[..raw.len() / 2]).unwrap();
    let e = load_idx::<f64>(&cutgz, &lab).unwrap_err();
    assert!(matches!(e, Error::IdxTruncated { .. }), "{e}");

    // label count disagrees
    let two = ds.take(2).unwrap();
    let lab2 = dir.path().join("l2");
    write_idx(&two, &dir.path().join("i2"), &lab2).unwrap();
    let e = load_idx::<f64>(&img, &lab2).unwrap_err();
    assert!(matches!(e, Error::IdxCountMismatch { images: 3, labels: 2 }), "{e}");

    let e = load_idx::<f64>(&dir.path().join("nope"), &lab).unwrap_err();
    assert!(matches!(e, Error::DatasetMissing(_)), "{e}");

    let msgs: std::collections::HashSet<String> = [
        load_idx::<f64>(&lab, &img).unwrap_err(),
        load_idx::<f64>(&img, &cut).unwrap_err(),
        load_idx::<f64>(&img, &lab2).unwrap_err(),
    ]
    .iter()
    .map(|e| e.to_string().split(':').next().unwrap().to_string())
    .collect();
    assert_eq!(msgs.len(), 3);
}
