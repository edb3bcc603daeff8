use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::layers::lorentz_mlr;

fn images(rng: &mut ChaCha8Rng, b: usize, h: usize, w: usize, c: usize) -> Tensor<f64> {
    Tensor::from_fn(&[b, h, w, c], |_| rng.random_range(0.0..1.0))
}

fn lenet() -> ModelConfig {
    preset("lenet-hcnn", &[28, 28, 1], 10, false).unwrap()
}

#[test]
fn lenet_builds_with_class_logits() {
    let m = Model::<f64>::build(&lenet()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = m.logits(&images(&mut rng, 3, 28, 28, 1)).unwrap();
    assert_eq!(y.shape(), &[3, 10]);
    assert!(y.all_finite());
    assert!(m.is_hyperbolic());
    let s = m.summary();
    assert!(s.contains("LorentzConv2d 1->8 k5x5 s2 p0"), "{s}");
    assert!(s.contains(&format!("trainable parameters: {}", m.num_params())));
}

#[test]
fn euclidean_twin_matches_shapes_and_size() {
    let h = Model::<f64>::build(&lenet()).unwrap();
    let e = Model::<f64>::build(&preset("lenet-hcnn", &[28, 28, 1], 10, true).unwrap()).unwrap();
    assert!(!e.is_hyperbolic());
    let (ph, pe) = (h.num_params() as f64, e.num_params() as f64);
    assert!((ph - pe).abs() / ph < 0.05, "{ph} vs {pe}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = images(&mut rng, 2, 28, 28, 1);
    // skip the projection node; every other node keeps its shape
    let th: Vec<_> = h.trace(&x).unwrap().into_iter().skip(1).collect();
    let te = e.trace(&x).unwrap();
    assert_eq!(th.len(), te.len());
    for (a, b) in th.iter().zip(&te) {
        let mut sa = a.value.shape().to_vec();
        if a.curvature.is_some() {
            *sa.last_mut().unwrap() -= 1;
        }
        assert_eq!(sa, b.value.shape(), "{} vs {}", a.layer, b.layer);
    }
}

#[test]
fn rejects_bad_configs() {
    let mut cfg = lenet();
    let json = serde_json::to_string(&cfg).unwrap().replace("\"curvature\":-1.0", "\"curvature\":0.5");
    assert!(serde_json::from_str::<ModelConfig>(&json).is_err());
    assert!(Curvature::new(0.0).is_err());

    cfg.layers[8] = LayerSpec::LorentzFc {
        in_dim: 255,
        out_dim: 64,
        activation: Activation::Identity,
    };
    let err = Model::<f64>::build(&cfg).unwrap_err().to_string();
    assert!(err.contains("layers.8 (lorentz_fc)") && err.contains("layers.7 (flatten)"), "{err}");

    let mut cfg = preset("resnet-mini", &[28, 28, 1], 10, false).unwrap();
    if let LayerSpec::Residual { branch } = &mut cfg.layers[4] {
        branch[1] = LayerSpec::LorentzBn { dim: 7 };
    }
    let err = Model::<f64>::build(&cfg).unwrap_err().to_string();
    assert!(err.contains("layers.4.branch.1 (lorentz_bn)"), "{err}");

    let mut cfg = lenet();
    cfg.layers.pop();
    assert!(Model::<f64>::build(&cfg).is_err());
    assert!(preset("vgg", &[28, 28, 1], 10, false).is_err());
    assert!(preset("lenet-hcnn", &[4], 10, false).is_err());

    let mut cfg = preset("hybrid", &[28, 28, 1], 10, false).unwrap();
    cfg.clip_radius = None;
    assert!(Model::<f64>::build(&cfg).is_err());
    cfg.clip_radius = Some(-1.0);
    assert!(Model::<f64>::build(&cfg).is_err());
}

#[test]
fn config_json_round_trip() {
    for name in PRESETS {
        let input: &[usize] = if *name == "mlr-only" { &[2] } else { &[28, 28, 1] };
        for euclidean in [false, true] {
            let cfg = preset(name, input, 10, euclidean).unwrap();
            let json = serde_json::to_string_pretty(&cfg).unwrap();
            let back: ModelConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(back, cfg);
            Model::<f32>::build(&back).unwrap();
        }
    }
    let bad = r#"{"architecture":"x","input":[2],"classes":2,"curvature":-1.0,"layers":[],"extra":1}"#;
    assert!(serde_json::from_str::<ModelConfig>(bad).is_err());
    let bad = r#"{"architecture":"x","input":[2],"classes":2,"curvature":-1.0,
        "layers":[{"kind":"lorentz_bn","dim":3,"momentum":0.2}]}"#;
    assert!(serde_json::from_str::<ModelConfig>(bad).is_err());
}

#[test]
fn input_projection_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in [-0.5, -1.0, -2.0] {
        let m = Lorentz::<f64>::with_k(k).unwrap();
        let tape = Tape::inference();
        let zero = tape.constant(Tensor::zeros(&[2, 3, 3, 2]));
        let origin = m.origin_tensor(2);
        for mode in [Projection::SpaceLift, Projection::ExpLift] {
            let y = input_projection(&m, zero, mode).unwrap().value();
            for row in y.data().chunks(3) {
                assert!((row[0] - origin.data()[0]).abs() <= 2.0 * f64::EPSILON);
                assert_eq!(&row[1..], &[0.0, 0.0]);
            }
        }
        let img = images(&mut rng, 2, 3, 3, 2);
        let y = input_projection(&m, tape.constant(img.clone()), Projection::SpaceLift).unwrap();
        assert_eq!(m.space(y).unwrap().value().as_ref(), &img);
        let y = input_projection(&m, tape.constant(img.scale(3.0)), Projection::ExpLift).unwrap();
        m.check_point(&y.value(), 1e-10).unwrap();
    }
}

#[test]
fn mlr_only_on_origin_inputs_gives_zero_logits() {
    let cfg = preset("mlr-only", &[3], 4, false).unwrap();
    let m = Model::<f64>::build(&cfg).unwrap();
    let y = m.logits(&Tensor::zeros(&[5, 3])).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn hybrid_matches_manual_composition() {
    let mut cfg = preset("hybrid", &[16, 16, 1], 3, false).unwrap();
    cfg.curvature = Curvature::new(-0.7).unwrap();
    cfg.clip_radius = Some(0.8);
    if let LayerSpec::Linear { in_dim, .. } = &mut cfg.layers[7] {
        assert_eq!(*in_dim, 16);
    }
    let model = Model::<f64>::build(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = images(&mut rng, 4, 16, 16, 1);
    let got = model.logits(&x).unwrap();

    // backbone is everything before the clip node
    let backbone = ModelConfig {
        layers: cfg.layers[..8].to_vec(),
        classes: 64,
        ..cfg.clone()
    };
    let mut bb = Model::<f64>::build(&backbone).unwrap();
    for (_, p) in bb.store_mut().iter_mut() {
        p.value = model.store().value(model.store().find(&p.name).unwrap()).clone();
    }
    let feats = bb.logits(&x).unwrap();
    let tape = Tape::inference();
    let man = model.manifold();
    let clipped = feature_clip(tape.constant(feats), 0.8).unwrap();
    let pts = man.exp0(clipped).unwrap();
    let s = model.store();
    let z = tape.constant(s.value(s.find("layers.10.z").unwrap()).clone());
    let a = tape.constant(s.value(s.find("layers.10.a").unwrap()).clone());
    let want = lorentz_mlr(&man, pts, z, a).unwrap().value();
    assert_eq!(&got, want.as_ref());
}

#[test]
fn hybrid_with_identity_backbone_is_clip_exp_mlr() {
    let cfg = ModelConfig {
        architecture: "hybrid-identity".into(),
        input: vec![4],
        classes: 3,
        curvature: Curvature::new(-1.3).unwrap(),
        projection: Projection::SpaceLift,
        clip_radius: Some(1.0),
        seed: 5,
        layers: vec![
            LayerSpec::Clip,
            LayerSpec::InputProjection {
                mode: Some(Projection::ExpLift),
            },
            LayerSpec::LorentzMlr { dim: 4, classes: 3 },
        ],
    };
    let model = Model::<f64>::build(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::from_fn(&[6, 4], |_| rng.random_range(-2.0..2.0));
    let got = model.logits(&x).unwrap();
    let tape = Tape::inference();
    let man = model.manifold();
    let pts = man.exp0(feature_clip(tape.constant(x), 1.0).unwrap()).unwrap();
    let s = model.store();
    let want = lorentz_mlr(
        &man,
        pts,
        tape.constant(s.value(s.find("layers.2.z").unwrap()).clone()),
        tape.constant(s.value(s.find("layers.2.a").unwrap()).clone()),
    )
    .unwrap()
    .value();
    assert_eq!(&got, want.as_ref());
}

#[test]
fn eval_is_pure_and_batch_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in ["lenet-hcnn", "resnet-mini", "hybrid"] {
        let m = Model::<f64>::build(&preset(name, &[16, 16, 1], 10, false).unwrap()).unwrap();
        let x = images(&mut rng, 8, 16, 16, 1);
        let y = m.logits(&x).unwrap();
        assert_eq!(y, m.logits(&x).unwrap());
        for i in [0, 5] {
            let xi = x.narrow(0, i, 1).unwrap();
            assert_eq!(m.logits(&xi).unwrap(), y.narrow(0, i, 1).unwrap(), "{name} row {i}");
        }
    }
}

#[test]
fn every_hyperbolic_activation_is_on_manifold() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for name in ["lenet-hcnn", "resnet-mini", "hybrid"] {
        for k in [-0.5, -1.0, -2.0] {
            let mut cfg = preset(name, &[28, 28, 1], 10, false).unwrap();
            cfg.curvature = Curvature::new(k).unwrap();
            let m = Model::<f64>::build(&cfg).unwrap();
            let x = images(&mut rng, 2, 28, 28, 1);
            let mut hyperbolic = 0;
            for t in m.trace(&x).unwrap() {
                if let Some(c) = t.curvature {
                    let r = Lorentz::new(c).manifold_residual(&t.value);
                    assert!(r <= 1e-10, "{name} K={k} {}: {r}", t.layer);
                    hyperbolic += 1;
                }
            }
            assert!(hyperbolic >= 1);
            // at 32 bits the bound is relative to each point's own scale
            let m = m.cast::<f32>().unwrap();
            for t in m.trace(&x.cast()).unwrap() {
                if let Some(c) = t.curvature {
                    let r = Lorentz::new(c).scaled_residual(&t.value);
                    assert!(r <= 1e-4, "{name} K={k} {} (f32): {r}", t.layer);
                }
            }
        }
    }
}

#[test]
fn lenet_composite_passes_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cfg = lenet();
    cfg.curvature = Curvature::new(-0.8).unwrap();
    let m = Model::<f64>::build(&cfg).unwrap();
    let x = images(&mut rng, 3, 28, 28, 1);
    let opts = GradcheckOptions {
        max_coords: Some(40),
        ..Default::default()
    };
    for train in [true, false] {
        let r = m.gradcheck(&x, &[1, 7, 3], train, &opts).unwrap();
        assert!(r.passed() && r.max_rel_err < 1e-4, "train={train}: {r:?}");
    }
}

#[test]
fn cast_and_predict() {
    let m = Model::<f64>::build(&lenet()).unwrap();
    let f = m.cast::<f32>().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = images(&mut rng, 4, 28, 28, 1);
    let a = m.logits(&x).unwrap();
    let b = f.logits(&x.cast()).unwrap().cast::<f64>();
    assert!(a.max_abs_diff(&b) < 1e-3);
    assert_eq!(m.predict(&x).unwrap(), argmax_rows(&a));
    assert!(m.logits(&Tensor::zeros(&[2, 28, 28, 3])).is_err());
}
