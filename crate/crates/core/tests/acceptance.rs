//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! before asserting, so `cargo test --test acceptance -- --nocapture`
//! gives a readable scorecard.
//!
//! The learning experiments run at desk scale (hidden width 16, two blocks,
//! four heads, 40 epochs); see the README for the numbers they produce.

use ait::alinear::{alinear_forward, export_weight_matrix, ALinearConfig, ALinearInput, ALinearParams};
use ait::data::{fit_norm, generate_synthetic, read_dataset, split, write_dataset, Batch, GeneratorConfig, RegularGrid, Sample};
use ait::eval::{evaluate_model, metric_mae, metric_mse, predict_samples};
use ait::model::{mse_loss, AiTConfig, Checkpoint, Model, ModelSpec, Variant};
use ait::numerics::{compare_gradients, finite_diff_grad, Graph, Tensor};
use ait::training::{cosine_lr, fit, StopReason, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
const HIDDEN: usize = 16;
const HEADS: usize = 4;
const BLOCKS: usize = 2;
const EPOCHS: usize = 40;
/// Required seed-average improvement of full AiT over the mean baseline.
/// Fixed after the first oracle run, which measured about 71%.
const SKILL_MARGIN: f64 = 0.25;
const EQUIV_TOLERANCE: f64 = 0.05;

fn report(id: u32, name: &str, ok: bool, detail: String) {
    println!("[{}] {id} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

struct Task {
    train: Vec<Sample>,
    val: Vec<Sample>,
    test: Vec<Sample>,
}

fn task(gen: &GeneratorConfig, seed: u64) -> Task {
    let data = generate_synthetic(gen, seed).unwrap();
    let parts = split(&data, [0.6, 0.2, 0.2], seed).unwrap();
    let norm = fit_norm(&parts.train);
    Task {
        train: norm.apply_dataset(&parts.train).samples,
        val: norm.apply_dataset(&parts.val).samples,
        test: norm.apply_dataset(&parts.test).samples,
    }
}

fn train_cfg(seed: u64, max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        max_epochs,
        patience,
        seed,
        ..TrainConfig::default()
    }
}

fn test_mse(spec: ModelSpec, t: &Task, cfg: &TrainConfig) -> f64 {
    let (best, _) = fit(&Model::new(spec, cfg.seed).unwrap(), &t.train, &t.val, cfg).unwrap();
    evaluate_model(&best, &t.test).unwrap().mse
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn gradients_match_finite_differences() {
    let gen = GeneratorConfig {
        n_vars: 3,
        n_samples: 2,
        rate: 0.4,
        ..GeneratorConfig::default()
    };
    let data = generate_synthetic(&gen, 11).unwrap();
    let samples = fit_norm(&data).apply_dataset(&data).samples;
    let lens: Vec<usize> = samples.iter().flat_map(|s| s.variables.iter().map(|v| v.observed.len())).collect();
    assert!(lens.iter().any(|&l| l != lens[0]), "batch is not ragged: {lens:?}");
    let batch = Batch::from_samples(&samples.iter().collect::<Vec<_>>());

    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for variant in Variant::ALL {
        let model = Model::ait(AiTConfig::small(3, 8, 2, 2).with_variant(variant), 11).unwrap();
        let (_, analytic) = model.loss_and_grad(&batch).unwrap();
        let numeric = finite_diff_grad(|p| model.loss_with(p, &batch).unwrap(), &model.params, 1e-5);
        let r = compare_gradients(&analytic, &numeric, 1e-4);
        for p in r.params.iter().filter(|p| !p.passed) {
            failures.push(format!("{}:{}={:.2e}", variant.as_str(), p.name, p.rel_error));
        }
        worst = worst.max(r.worst().map_or(0.0, |p| p.rel_error));
    }
    let ok = failures.is_empty();
    report(1, "gradient oracle", ok, format!("worst relative error {worst:.2e} (tolerance 1e-4) {failures:?}"));
    assert!(ok);
}

fn softmax(row: &[f64], mask: &[bool]) -> Vec<f64> {
    let m = row
        .iter()
        .zip(mask)
        .filter(|(_, &k)| k)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return vec![0.0; row.len()];
    }
    let e: Vec<f64> = row.iter().zip(mask).map(|(v, &k)| if k { (v - m).exp() } else { 0.0 }).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn embed(p: &ALinearParams, side: &str, t: f64) -> Vec<f64> {
    let d = p.config.d;
    let get = |n: &str| p.params.get(&format!("{side}.{n}")).unwrap().data().to_vec();
    let (w1, b1, w2, b2) = (get("w1"), get("b1"), get("w2"), get("b2"));
    let h: Vec<f64> = (0..d).map(|j| (t * w1[j] + b1[j]).max(0.0)).collect();
    (0..d).map(|k| (0..d).map(|j| h[j] * w2[j * d + k]).sum::<f64>() + b2[k]).collect()
}

fn rows_of(t: &Tensor, d: usize) -> Vec<Vec<f64>> {
    t.data().chunks(d).map(<[f64]>::to_vec).collect()
}

/// Weight matrix computed with plain loops from the layer's parameters.
fn oracle_weights(p: &ALinearParams, l_in: usize, s: Option<&[f64]>, mask: &[bool], t: Option<&[f64]>) -> Vec<Vec<f64>> {
    let d = p.config.d;
    let keys = match s {
        Some(s) => s.iter().map(|&v| embed(p, "key", v)).collect(),
        None => rows_of(p.params.get("k_default").unwrap(), d),
    };
    let queries: Vec<Vec<f64>> = match t {
        Some(t) => t.iter().map(|&v| embed(p, "query", v)).collect(),
        None => rows_of(p.params.get("q_default").unwrap(), d),
    };
    queries
        .iter()
        .map(|q| {
            let scores: Vec<f64> = (0..l_in).map(|i| q.iter().zip(&keys[i]).map(|(a, b)| a * b).sum()).collect();
            softmax(&scores, mask)
        })
        .collect()
}

#[test]
fn alinear_invariants_hold_over_random_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_sum, mut worst_oracle, mut worst_perm) = (0.0f64, 0.0f64, 0.0f64);
    let mut bound_violations = 0;
    let mut masked_nonzero = 0;
    let mut modes = [0usize; 4];
    for _ in 0..1000 {
        let l_in = [1, 3, 7, 50][rng.gen_range(0..4)];
        let l_out = [1, 5, 20][rng.gen_range(0..3)];
        let mode = rng.gen_range(0..4);
        modes[mode] += 1;
        let (dyn_keys, dyn_queries) = (mode & 1 == 1, mode & 2 == 2);
        let d = rng.gen_range(1..=8);
        let cfg = ALinearConfig::new(d, (!dyn_keys).then_some(l_in), (!dyn_queries).then_some(l_out));
        let mut layer = ALinearParams::init(cfg, &mut rng);
        let scale = rng.gen_range(1.0..80.0);
        for (_, p) in layer.params.iter_mut() {
            p.data_mut().iter_mut().for_each(|v| *v *= scale);
        }

        let x: Vec<f64> = (0..l_in).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut s: Vec<f64> = (0..l_in).map(|_| rng.gen_range(0.0..0.5)).collect();
        s.sort_by(f64::total_cmp);
        let t: Vec<f64> = (0..l_out).map(|_| rng.gen_range(0.5..1.0)).collect();
        let mut mask: Vec<bool> = (0..l_in).map(|_| rng.gen_bool(0.7)).collect();
        if !dyn_keys {
            mask.fill(true);
        }
        let keep = rng.gen_range(0..l_in);
        mask[keep] = true;

        let input = ALinearInput {
            x: &x,
            s: dyn_keys.then_some(&s[..]),
            s_mask: dyn_keys.then_some(&mask[..]),
            t: dyn_queries.then_some(&t[..]),
        };
        let w = export_weight_matrix(&layer, &input).unwrap();
        let y = alinear_forward(&layer, &input).unwrap();
        let oracle = oracle_weights(&layer, l_in, input.s, &mask, input.t);
        assert_eq!(w.shape(), &[l_out, l_in]);
        for i in 0..l_out {
            worst_sum = worst_sum.max((w.row(i).iter().sum::<f64>() - 1.0).abs());
            for (a, b) in w.row(i).iter().zip(&oracle[i]) {
                worst_oracle = worst_oracle.max((a - b).abs());
            }
        }
        let live: Vec<f64> = x.iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
        let lo = live.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = live.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        bound_violations += y.data().iter().filter(|&&v| v < lo - 1e-12 || v > hi + 1e-12).count();

        if dyn_keys {
            let mut perm: Vec<usize> = (0..l_in).collect();
            for i in (1..l_in).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
            let ps: Vec<f64> = perm.iter().map(|&i| s[i]).collect();
            let pm: Vec<bool> = perm.iter().map(|&i| mask[i]).collect();
            let permuted = ALinearInput { x: &px, s: Some(&ps), s_mask: Some(&pm), t: input.t };
            let py = alinear_forward(&layer, &permuted).unwrap();
            for (a, b) in y.data().iter().zip(py.data()) {
                worst_perm = worst_perm.max((a - b).abs());
            }

            let none = vec![false; l_in];
            let empty = ALinearInput { s_mask: Some(&none), ..input };
            let z = alinear_forward(&layer, &empty).unwrap();
            masked_nonzero += z.data().iter().filter(|&&v| v != 0.0).count();
        }
    }
    let ok = worst_sum <= 1e-12
        && worst_oracle <= 1e-12
        && worst_perm <= 1e-12
        && bound_violations == 0
        && masked_nonzero == 0
        && modes.iter().all(|&m| m > 0);
    report(
        2,
        "adaptive linear invariants",
        ok,
        format!(
            "1000 configs, modes {modes:?}; max |row sum - 1| {worst_sum:.1e}, max |W - oracle| {worst_oracle:.1e}, \
             max permutation drift {worst_perm:.1e}, bound violations {bound_violations}, nonzero masked outputs {masked_nonzero}"
        ),
    );
    assert!(ok);
}

#[test]
fn default_alinear_matches_static_linear_on_regular_grid() {
    let (l_in, l_out) = (24, 8);
    let gen = GeneratorConfig {
        n_samples: 2000,
        missingness: 0.0,
        regular: Some(RegularGrid { l_in, l_out }),
        ..GeneratorConfig::default()
    };
    let (mut a, mut s) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let t = task(&gen, seed);
        let cfg = train_cfg(seed, 1000, 40);
        a.push(test_mse(ModelSpec::RegularAlinear { d: 16, l_in, l_out }, &t, &cfg));
        s.push(test_mse(ModelSpec::StaticLinear { l_in, l_out }, &t, &cfg));
    }
    let rel = (mean(&a) - mean(&s)).abs() / mean(&s);
    let ok = rel <= EQUIV_TOLERANCE;
    report(
        3,
        "regular-grid equivalence",
        ok,
        format!(
            "seed-average test MSE adaptive {:.5} vs static {:.5}, relative difference {:.3}% (tolerance {}%)",
            mean(&a),
            mean(&s),
            100.0 * rel,
            100.0 * EQUIV_TOLERANCE
        ),
    );
    assert!(ok);
}

#[test]
fn forecasting_skill_and_ablation_directions() {
    let gen = GeneratorConfig::default();
    assert_eq!((gen.n_vars, gen.n_latents, gen.n_samples, gen.missingness), (6, 2, 2000, 0.5));
    let spec = |variant| ModelSpec::Ait(AiTConfig::small(gen.n_vars, HIDDEN, HEADS, BLOCKS).with_variant(variant));
    let (mut full, mut baseline, mut rm_spattf) = (Vec::new(), Vec::new(), Vec::new());
    for seed in SEEDS {
        let t = task(&gen, seed);
        let cfg = train_cfg(seed, EPOCHS, EPOCHS);
        full.push(test_mse(spec(Variant::Full), &t, &cfg));
        rm_spattf.push(test_mse(spec(Variant::RmSpattf), &t, &cfg));
        baseline.push(evaluate_model(&Model::mean(), &t.test).unwrap().mse);
    }
    let strict = full.iter().zip(&baseline).all(|(f, b)| f < b);
    let margin = 1.0 - mean(&full) / mean(&baseline);
    let skill_ok = strict && margin >= SKILL_MARGIN;
    report(
        4,
        "forecasting skill",
        skill_ok,
        format!(
            "full {full:.4?} vs mean baseline {baseline:.4?}; below on every seed: {strict}; \
             seed-average margin {:.1}% (required {:.0}%)",
            100.0 * margin,
            100.0 * SKILL_MARGIN
        ),
    );

    let sparse = GeneratorConfig {
        unobserved_fraction: 0.2,
        ..gen.clone()
    };
    let (mut full_sparse, mut rm_statve) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let t = task(&sparse, seed);
        let cfg = train_cfg(seed, EPOCHS, EPOCHS);
        full_sparse.push(test_mse(spec(Variant::Full), &t, &cfg));
        rm_statve.push(test_mse(spec(Variant::RmStatve), &t, &cfg));
    }
    let spattf_ok = mean(&full) < mean(&rm_spattf);
    let statve_ok = mean(&full_sparse) < mean(&rm_statve);
    report(
        5,
        "ablation directions",
        spattf_ok && statve_ok,
        format!(
            "full {:.4} < rm_spattf {:.4}: {spattf_ok}; with 20% unobserved, full {:.4} < rm_statve {:.4}: {statve_ok}",
            mean(&full),
            mean(&rm_spattf),
            mean(&full_sparse),
            mean(&rm_statve)
        ),
    );
    assert!(skill_ok && spattf_ok && statve_ok);
}

#[test]
fn training_recipe_schedule_and_early_stopping() {
    let gen = GeneratorConfig {
        n_vars: 3,
        n_samples: 30,
        rate: 0.5,
        ..GeneratorConfig::default()
    };
    let t = task(&gen, 5);
    let model = Model::ait(AiTConfig::small(3, 4, 2, 1), 5).unwrap();
    let cfg = train_cfg(5, 100, 100);
    assert_eq!((cfg.lr0, cfg.cosine_period), (1e-3, 40));
    let (_, r) = fit(&model, &t.train, &t.val, &cfg).unwrap();
    let trace_ok = r.epochs.len() == 100
        && r.epochs
            .iter()
            .enumerate()
            .all(|(i, e)| e.lr.to_bits() == cosine_lr(i, &cfg).to_bits());

    let patience = 5;
    let (_, r2) = fit(&model, &t.train, &t.val, &train_cfg(5, 1000, patience)).unwrap();
    let stopped_at = r2.epochs.len();
    let stop_ok = r2.stop_reason == StopReason::Patience && stopped_at - r2.best_epoch <= patience + 1;
    report(
        6,
        "training recipe",
        trace_ok && stop_ok,
        format!(
            "lr trace matches schedule over {} epochs: {trace_ok}; stopped at epoch {stopped_at}, best epoch {}, patience {patience}",
            r.epochs.len(),
            r2.best_epoch
        ),
    );
    assert!(trace_ok && stop_ok);
}

#[test]
fn runs_are_deterministic_and_formats_round_trip() {
    let gen = GeneratorConfig {
        n_samples: 60,
        ..GeneratorConfig::default()
    };
    let data = generate_synthetic(&gen, 9).unwrap();
    let t = task(&gen, 9);
    let cfg = train_cfg(9, 4, 4);
    let model = Model::ait(AiTConfig::small(gen.n_vars, 8, 2, 2), 9).unwrap();
    let run = || {
        let (best, _) = fit(&model, &t.train, &t.val, &cfg).unwrap();
        let mut bytes = Vec::new();
        Checkpoint::new(best.clone(), None).write_to(&mut bytes).unwrap();
        let metrics = serde_json::to_string(&evaluate_model(&best, &t.test).unwrap()).unwrap();
        (best, bytes, metrics)
    };
    let (best, ck_a, m_a) = run();
    let (_, ck_b, m_b) = run();
    let same_run = ck_a == ck_b && m_a == m_b;

    let mut first = Vec::new();
    write_dataset(&data, &mut first).unwrap();
    let back = read_dataset(&first[..]).unwrap();
    let mut second = Vec::new();
    write_dataset(&back, &mut second).unwrap();
    let bits = |d: &ait::data::Dataset| -> Vec<u64> {
        d.samples
            .iter()
            .flat_map(|s| s.variables.iter())
            .flat_map(|v| v.observed.times.iter().chain(&v.observed.values).chain(&v.queries.times))
            .map(|x| x.to_bits())
            .collect()
    };
    let dataset_ok = back == data && first == second && bits(&back) == bits(&data);

    let loaded = Checkpoint::read_from(&ck_a[..]).unwrap().model;
    let before = metric_mse(&predict_samples(&best, &t.val, 32, 1).unwrap(), &t.val).unwrap();
    let after = metric_mse(&predict_samples(&loaded, &t.val, 32, 1).unwrap(), &t.val).unwrap();
    let ck_ok = (before - after).abs() <= 1e-10;
    report(
        7,
        "determinism and formats",
        same_run && dataset_ok && ck_ok,
        format!(
            "repeat run bit-identical: {same_run}; dataset round trip exact: {dataset_ok}; \
             reloaded checkpoint loss drift {:.1e}",
            (before - after).abs()
        ),
    );
    assert!(same_run && dataset_ok && ck_ok);
}

/// Per-variable mean of squared errors, then mean over variables with
/// queries, then mean over samples.
fn nested_mean(preds: &[Vec<Vec<f64>>], samples: &[Sample], f: fn(f64) -> f64) -> f64 {
    let per_sample: Vec<f64> = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| {
            let vars: Vec<f64> = p
                .iter()
                .zip(&s.variables)
                .filter(|(_, v)| !v.queries.times.is_empty())
                .map(|(pv, v)| {
                    let tg = v.queries.targets.as_ref().unwrap();
                    pv.iter().zip(tg).map(|(a, b)| f(a - b)).sum::<f64>() / tg.len() as f64
                })
                .collect();
            mean(&vars)
        })
        .collect();
    mean(&per_sample)
}

#[test]
fn metrics_conform_to_training_loss_and_hand_example() {
    let gen = GeneratorConfig {
        n_vars: 4,
        n_samples: 12,
        ..GeneratorConfig::default()
    };
    let data = generate_synthetic(&gen, 13).unwrap();
    let samples = fit_norm(&data).apply_dataset(&data).samples;
    let model = Model::ait(AiTConfig::small(4, 8, 2, 2), 13).unwrap();
    let batch = Batch::from_samples(&samples.iter().collect::<Vec<_>>());
    let mut g = Graph::new();
    let y = model.forward(&mut g, &batch).unwrap();
    let loss = mse_loss(&mut g, y, &batch).unwrap();
    let loss = g.value(loss).item().unwrap();
    let preds = predict_samples(&model, &samples, 5, 1).unwrap();
    let mse = metric_mse(&preds, &samples).unwrap();
    let mae = metric_mae(&preds, &samples).unwrap();
    let loss_gap = (mse - loss).abs();
    let oracle_gap = (mse - nested_mean(&preds, &samples, |e| e * e))
        .abs()
        .max((mae - nested_mean(&preds, &samples, f64::abs)).abs());

    let hand = Sample {
        variables: vec![
            ait::data::Variable {
                observed: ait::data::VariableSeries { times: vec![0.1], values: vec![0.0] },
                queries: ait::data::QuerySet { times: vec![0.6, 0.7], targets: Some(vec![1.0, 1.0]) },
            },
            ait::data::Variable {
                observed: ait::data::VariableSeries { times: vec![0.2], values: vec![0.0] },
                queries: ait::data::QuerySet { times: vec![0.8], targets: Some(vec![3.0]) },
            },
        ],
        observation_span: (0.0, 0.5),
        forecast_span: (0.5, 1.0),
    };
    let zero = vec![vec![vec![0.0, 0.0], vec![0.0]]];
    let hand_mse = metric_mse(&zero, std::slice::from_ref(&hand)).unwrap();
    let ok = loss_gap <= 1e-12 && oracle_gap <= 1e-12 && hand_mse == 5.0;
    report(
        8,
        "metric conformance",
        ok,
        format!("|metric - loss| {loss_gap:.1e}; |metric - oracle| {oracle_gap:.1e}; hand example MSE {hand_mse} (expected 5)"),
    );
    assert!(ok);
}
