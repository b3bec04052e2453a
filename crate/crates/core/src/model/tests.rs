use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{fit_norm, generate_synthetic, GeneratorConfig, QuerySet, Sample, Variable, VariableSeries};
use crate::numerics::{compare_gradients, finite_diff_grad};

fn toy_samples(n_vars: usize, n_samples: usize, seed: u64) -> Vec<Sample> {
    let cfg = GeneratorConfig {
        n_vars,
        n_samples,
        rate: 0.4,
        ..GeneratorConfig::default()
    };
    let d = generate_synthetic(&cfg, seed).unwrap();
    fit_norm(&d).apply_dataset(&d).samples
}

fn batch_of(samples: &[Sample]) -> Batch {
    Batch::from_samples(&samples.iter().collect::<Vec<_>>())
}

fn small(n_vars: usize, variant: Variant) -> AiTConfig {
    AiTConfig::small(n_vars, 8, 2, 2).with_variant(variant)
}

fn var(times: &[f64], values: &[f64], qt: &[f64], qx: &[f64]) -> Variable {
    Variable {
        observed: VariableSeries {
            times: times.to_vec(),
            values: values.to_vec(),
        },
        queries: QuerySet {
            times: qt.to_vec(),
            targets: Some(qx.to_vec()),
        },
    }
}

fn sample_of(variables: Vec<Variable>) -> Sample {
    Sample {
        variables,
        observation_span: (0.0, 0.5),
        forecast_span: (0.5, 1.0),
    }
}

fn random_embeddings(rows: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![rows, d], (0..rows * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn config_validation() {
    assert!(AiTConfig::small(3, 10, 4, 1).validate().is_err());
    assert!(AiTConfig::small(3, 8, 2, 0).validate().is_err());
    assert!(AiTConfig::small(3, 8, 2, 0).with_variant(Variant::RmSpattf).validate().is_ok());
    assert_eq!(AiTConfig::new(5).hidden, 64);
    for v in Variant::ALL {
        assert_eq!(Variant::parse(v.as_str()), Some(v));
    }
}

#[test]
fn single_token_attention_is_one() {
    let cfg = small(1, Variant::Full);
    let model = Model::ait(cfg.clone(), 1).unwrap();
    let mut g = Graph::new();
    let h = g.constant(random_embeddings(3, 8, 2));
    let (_, maps) = spatial_encode_with_attention(&cfg, &mut g, &model.params, h).unwrap();
    assert_eq!(maps.len(), 2);
    for m in maps {
        assert!(g.value(m).data().iter().all(|&a| a == 1.0));
    }
}

#[test]
fn spatial_encoder_is_permutation_equivariant() {
    let cfg = small(4, Variant::Full);
    let model = Model::ait(cfg.clone(), 3).unwrap();
    let h = random_embeddings(8, 8, 4);
    let perm = [2, 0, 3, 1];
    let mut permuted = h.clone();
    for b in 0..2 {
        for (i, &p) in perm.iter().enumerate() {
            for k in 0..8 {
                permuted.data_mut()[(b * 4 + i) * 8 + k] = h.data()[(b * 4 + p) * 8 + k];
            }
        }
    }
    let run = |x: Tensor| {
        let mut g = Graph::new();
        let v = g.constant(x);
        let y = spatial_encode(&cfg, &mut g, &model.params, v).unwrap();
        g.value(y).clone()
    };
    let (y, yp) = (run(h), run(permuted));
    for b in 0..2 {
        for (i, &p) in perm.iter().enumerate() {
            for k in 0..8 {
                let a = yp.data()[(b * 4 + i) * 8 + k];
                let e = y.data()[(b * 4 + p) * 8 + k];
                assert!((a - e).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn spatial_encoder_gradient_check() {
    let cfg = small(3, Variant::Full);
    let model = Model::ait(cfg.clone(), 5).unwrap();
    let blocks = {
        let mut p = ParamSet::new();
        for (k, v) in model.params.iter().filter(|(k, _)| k.starts_with("blocks.")) {
            p.insert(k, v.clone());
        }
        p
    };
    let h = random_embeddings(6, 8, 6);
    let weights = random_embeddings(6, 8, 7);
    let build = |g: &mut Graph, p: &ParamSet| {
        let x = g.constant(h.clone());
        let y = spatial_encode(&cfg, g, p, x).unwrap();
        let w = g.constant(weights.clone());
        let y = g.mul(y, w).unwrap();
        g.sum(y).unwrap()
    };
    let mut g = Graph::new();
    let loss = build(&mut g, &blocks);
    let ad = g.backward(loss, &blocks).unwrap();
    let fd = finite_diff_grad(
        |p| {
            let mut g = Graph::new();
            let l = build(&mut g, p);
            g.value(l).item().unwrap()
        },
        &blocks,
        1e-5,
    );
    let report = compare_gradients(&ad, &fd, 1e-4);
    assert!(report.passed(), "{:?}", report.worst());
}

#[test]
fn full_model_gradient_check_every_variant() {
    let samples = toy_samples(3, 2, 8);
    let batch = batch_of(&samples);
    for variant in Variant::ALL {
        let model = Model::ait(small(3, variant), 9).unwrap();
        let (_, ad) = model.loss_and_grad(&batch).unwrap();
        let fd = finite_diff_grad(|p| model.loss_with(p, &batch).unwrap(), &model.params, 1e-5);
        let report = compare_gradients(&ad, &fd, 1e-4);
        assert!(report.passed(), "{}: {:?}", variant.as_str(), report.worst());
        assert_eq!(report.params.len(), model.params.len());
    }
}

#[test]
fn static_fusion_gradient_reaches_h_stat() {
    let samples = toy_samples(3, 2, 10);
    let model = Model::ait(small(3, Variant::Full), 11).unwrap();
    let (_, grads) = model.loss_and_grad(&batch_of(&samples)).unwrap();
    assert!(grads["h_stat"].max_abs() > 0.0);
}

#[test]
fn constant_series_encodes_to_constant_vector() {
    let cfg = small(2, Variant::Full);
    let model = Model::ait(cfg.clone(), 12).unwrap();
    let s = sample_of(vec![
        var(&[0.1, 0.2, 0.4], &[1.5; 3], &[0.7], &[0.0]),
        var(&[], &[], &[0.8], &[0.0]),
    ]);
    let batch = batch_of(&[s]);
    let mut g = Graph::new();
    let h = temporal_encode(&cfg, &mut g, &model.params, &batch).unwrap();
    let h = g.value(h);
    assert_eq!(h.shape(), &[2, 8]);
    assert!(h.data()[..8].iter().all(|&v| (v - 1.5).abs() < 1e-12));
    assert!(h.data()[8..].iter().all(|&v| v == 0.0));
}

#[test]
fn ragged_batch_shapes() {
    let lens = [0usize, 1, 5, 17];
    let variables = lens
        .iter()
        .map(|&l| {
            let t: Vec<f64> = (0..l).map(|i| 0.5 * i as f64 / 17.0).collect();
            var(&t, &vec![0.3; l], &[0.6, 0.9], &[0.0, 0.0])
        })
        .collect();
    let cfg = small(4, Variant::Full);
    let model = Model::ait(cfg.clone(), 13).unwrap();
    let batch = batch_of(&[sample_of(variables)]);
    let mut g = Graph::new();
    let h = temporal_encode(&cfg, &mut g, &model.params, &batch).unwrap();
    assert_eq!(g.value(h).shape(), &[4, 8]);
    let out = model.predict(&batch).unwrap();
    assert_eq!(out.values.shape(), &[1, 4, 2]);
    assert!(out.values.is_finite());
}

#[test]
fn unobserved_variable_depends_only_on_static_embedding() {
    let cfg = small(2, Variant::Full);
    let model = Model::ait(cfg.clone(), 14).unwrap();
    let fused = |x: f64| {
        let s = sample_of(vec![var(&[0.1, 0.3], &[x, -x], &[0.7], &[0.0]), var(&[], &[], &[0.7], &[0.0])]);
        let batch = batch_of(&[s]);
        let mut g = Graph::new();
        let h = temporal_encode(&cfg, &mut g, &model.params, &batch).unwrap();
        let h = fuse_static(&cfg, &mut g, &model.params, h).unwrap();
        g.value(h).clone()
    };
    let (a, b) = (fused(1.0), fused(-2.0));
    assert_eq!(&a.data()[8..], &b.data()[8..]);
    assert_ne!(&a.data()[..8], &b.data()[..8]);
}

#[test]
fn identical_dynamics_different_statics_differ() {
    let cfg = small(2, Variant::Full);
    let model = Model::ait(cfg.clone(), 15).unwrap();
    let s = sample_of(vec![
        var(&[0.1, 0.3], &[1.0, 2.0], &[0.7], &[0.0]),
        var(&[0.1, 0.3], &[1.0, 2.0], &[0.7], &[0.0]),
    ]);
    let batch = batch_of(&[s]);
    let mut g = Graph::new();
    let h = temporal_encode(&cfg, &mut g, &model.params, &batch).unwrap();
    let h = fuse_static(&cfg, &mut g, &model.params, h).unwrap();
    let h = g.value(h);
    assert_ne!(&h.data()[..8], &h.data()[8..]);
}

#[test]
fn constant_hidden_vector_predicts_constant() {
    let cfg = small(1, Variant::Full);
    let model = Model::ait(cfg.clone(), 16).unwrap();
    let s = sample_of(vec![var(&[0.1], &[0.0], &[0.55, 0.7, 0.95], &[0.0; 3])]);
    let batch = batch_of(&[s]);
    let mut g = Graph::new();
    let h = g.constant(Tensor::full(&[1, 8], -0.25));
    let y = predict(&cfg, &mut g, &model.params, h, &batch).unwrap();
    assert!(g.value(y).data().iter().all(|&v| (v + 0.25).abs() < 1e-12));
}

#[test]
fn duplicate_query_times_predict_identically() {
    let model = Model::ait(small(2, Variant::Full), 17).unwrap();
    let s = sample_of(vec![
        var(&[0.1, 0.2], &[1.0, 0.5], &[0.6, 0.6], &[0.0, 0.0]),
        var(&[0.3], &[-1.0], &[0.9, 0.9], &[0.0, 0.0]),
    ]);
    let out = model.predict(&batch_of(&[s])).unwrap();
    let v = out.values.data();
    assert_eq!(v[0], v[1]);
    assert_eq!(v[2], v[3]);
}

#[test]
fn rm_spattf_isolates_variables() {
    let model = Model::ait(small(3, Variant::RmSpattf), 18).unwrap();
    let mut samples = toy_samples(3, 2, 19);
    let base = model.predict(&batch_of(&samples)).unwrap();
    for s in &mut samples {
        for x in &mut s.variables[1].observed.values {
            *x += 3.0;
        }
        for x in &mut s.variables[2].observed.values {
            *x *= -1.0;
        }
    }
    let after = model.predict(&batch_of(&samples)).unwrap();
    let q = base.values.shape()[2];
    for b in 0..2 {
        let o = b * 3 * q;
        assert_eq!(&base.values.data()[o..o + q], &after.values.data()[o..o + q]);
    }
    let full = Model::ait(small(3, Variant::Full), 18).unwrap();
    assert_ne!(full.predict(&batch_of(&samples)).unwrap().values.data()[0], {
        let original = toy_samples(3, 2, 19);
        full.predict(&batch_of(&original)).unwrap().values.data()[0]
    });
}

#[test]
fn padding_never_leaks_into_predictions() {
    let samples = toy_samples(3, 3, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for variant in Variant::ALL {
        let model = Model::ait(small(3, variant), 22).unwrap();
        let batch = batch_of(&samples);
        let base = model.predict(&batch).unwrap();
        for _ in 0..10 {
            let mut fuzzed = batch.clone();
            for i in 0..fuzzed.obs_mask.data().len() {
                if !fuzzed.obs_mask.data()[i] {
                    fuzzed.obs_values.data_mut()[i] = rng.gen_range(-50.0..50.0);
                    fuzzed.obs_times.data_mut()[i] = rng.gen_range(-5.0..5.0);
                }
            }
            for i in 0..fuzzed.query_mask.data().len() {
                if !fuzzed.query_mask.data()[i] {
                    fuzzed.query_times.data_mut()[i] = rng.gen_range(-5.0..5.0);
                }
            }
            let out = model.predict(&fuzzed).unwrap();
            for (i, &m) in batch.query_mask.data().iter().enumerate() {
                if m {
                    assert_eq!(out.values.data()[i].to_bits(), base.values.data()[i].to_bits());
                }
            }
        }
    }
}

#[test]
fn joint_permutation_equivariance() {
    let samples = toy_samples(3, 2, 23);
    let model = Model::ait(small(3, Variant::Full), 24).unwrap();
    let perm = [1usize, 2, 0];
    let permuted: Vec<Sample> = samples
        .iter()
        .map(|s| Sample {
            variables: perm.iter().map(|&p| s.variables[p].clone()).collect(),
            ..s.clone()
        })
        .collect();
    let mut pmodel = model.clone();
    let hs = model.params.get("h_stat").unwrap();
    let pd = pmodel.params.get_mut("h_stat").unwrap();
    for (i, &p) in perm.iter().enumerate() {
        pd.data_mut()[i * 8..(i + 1) * 8].copy_from_slice(&hs.data()[p * 8..(p + 1) * 8]);
    }
    let a = model.predict(&batch_of(&samples)).unwrap();
    let b = pmodel.predict(&batch_of(&permuted)).unwrap();
    let q = a.values.shape()[2];
    for s in 0..2 {
        for (i, &p) in perm.iter().enumerate() {
            for j in 0..q {
                if a.mask.data()[(s * 3 + p) * q + j] {
                    let x = a.values.data()[(s * 3 + p) * q + j];
                    let y = b.values.data()[(s * 3 + i) * q + j];
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn nested_mean_loss_example() {
    let s = sample_of(vec![
        var(&[0.1], &[0.0], &[0.6, 0.7], &[1.0, 1.0]),
        var(&[0.1], &[0.0], &[0.6], &[3.0]),
    ]);
    let batch = batch_of(&[s]);
    let mut g = Graph::new();
    let pred = g.constant(Tensor::zeros(&[1, 2, 2]));
    let loss = mse_loss(&mut g, pred, &batch).unwrap();
    assert_eq!(g.value(loss).item(), Some(5.0));

    let mut g = Graph::new();
    let pred = g.constant(batch.targets.clone());
    let loss = mse_loss(&mut g, pred, &batch).unwrap();
    assert_eq!(g.value(loss).item(), Some(0.0));
}

#[test]
fn loss_ignores_unqueried_variables_and_duplicates() {
    let one = sample_of(vec![
        var(&[0.1], &[0.0], &[0.6, 0.7], &[1.0, 2.0]),
        var(&[0.1], &[0.0], &[], &[]),
    ]);
    let dup = sample_of(vec![
        var(&[0.1], &[0.0], &[0.6, 0.6, 0.7, 0.7], &[1.0, 1.0, 2.0, 2.0]),
        var(&[0.1], &[0.0], &[], &[]),
    ]);
    let model = Model::ait(small(2, Variant::Full), 25).unwrap();
    let a = model.loss_with(&model.params, &batch_of(&[one])).unwrap();
    let b = model.loss_with(&model.params, &batch_of(&[dup])).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn zero_queries_is_undefined() {
    let s = sample_of(vec![var(&[0.1], &[0.0], &[], &[])]);
    let model = Model::mean();
    assert_eq!(model.loss_with(&model.params, &batch_of(&[s])), Err(ModelError::UndefinedLoss));
}

#[test]
fn wrong_variable_count_is_rejected() {
    let model = Model::ait(small(2, Variant::Full), 26).unwrap();
    let batch = batch_of(&toy_samples(3, 1, 27));
    assert!(matches!(model.predict(&batch), Err(ModelError::VariableCount { expected: 2, found: 3 })));
}

#[test]
fn mean_baseline_on_constant_series() {
    let s = sample_of(vec![var(&[0.1, 0.2], &[4.0, 4.0], &[0.7, 0.8], &[4.0, 4.0])]);
    let model = Model::mean();
    assert_eq!(model.loss_with(&model.params, &batch_of(&[s])).unwrap(), 0.0);
}

fn regular_sample(values: &[f64], n_out: usize) -> Sample {
    let t: Vec<f64> = (0..values.len()).map(|i| i as f64 / 10.0).collect();
    let qt: Vec<f64> = (0..n_out).map(|i| 0.6 + i as f64 / 10.0).collect();
    sample_of(vec![var(&t, values, &qt, &vec![0.0; n_out])])
}

#[test]
fn uniform_static_linear_is_mean_pooling() {
    let mut model = Model::static_linear(4, 2, 28).unwrap();
    *model.params.get_mut("w_static").unwrap() = Tensor::zeros(&[2, 4]);
    let out = model.predict(&batch_of(&[regular_sample(&[1.0, 2.0, 3.0, 6.0], 2)])).unwrap();
    assert_eq!(out.values.data(), &[3.0, 3.0]);
}

#[test]
fn regular_baselines_reject_ragged_input() {
    let s = sample_of(vec![var(&[0.1, 0.2, 0.3], &[1.0; 3], &[0.7], &[0.0])]);
    let batch = batch_of(&[s]);
    let sl = Model::static_linear(4, 1, 29).unwrap();
    assert!(matches!(sl.predict(&batch), Err(ModelError::Contract(_))));
    let al = Model::new(ModelSpec::RegularAlinear { d: 4, l_in: 4, l_out: 1 }, 29).unwrap();
    assert!(matches!(al.predict(&batch), Err(ModelError::Contract(_))));
}

#[test]
fn regular_alinear_gradient_check() {
    let model = Model::new(ModelSpec::RegularAlinear { d: 4, l_in: 5, l_out: 3 }, 30).unwrap();
    let mut s = regular_sample(&[0.1, -0.4, 0.9, 0.3, 0.0], 3);
    s.variables[0].queries.targets = Some(vec![0.5, -0.5, 1.0]);
    let batch = batch_of(&[s]);
    let (_, ad) = model.loss_and_grad(&batch).unwrap();
    let fd = finite_diff_grad(|p| model.loss_with(p, &batch).unwrap(), &model.params, 1e-5);
    assert!(compare_gradients(&ad, &fd, 1e-4).passed());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let samples = toy_samples(3, 2, 31);
    for variant in Variant::ALL {
        let model = Model::ait(small(3, variant), 32).unwrap();
        let ck = Checkpoint::new(model.clone(), None);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], CHECKPOINT_MAGIC);
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back, ck);
        let batch = batch_of(&samples);
        assert_eq!(model.predict(&batch).unwrap(), back.model.predict(&batch).unwrap());
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let model = Model::ait(small(2, Variant::Full), 33).unwrap();
    let mut buf = Vec::new();
    Checkpoint::new(model, None).write_to(&mut buf).unwrap();
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::read_from(&bad[..]), Err(CheckpointError::Magic)));
    assert!(matches!(Checkpoint::read_from(&buf[..buf.len() - 3]), Err(CheckpointError::Length)));
    let mut long = buf.clone();
    long.push(0);
    assert!(matches!(Checkpoint::read_from(&long[..]), Err(CheckpointError::Length)));
}
