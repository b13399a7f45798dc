use facegate::classifier::{init_model, train, Label, LabeledExample, MlpModel, TrainConfig, HIDDEN_UNITS};
use facegate::features::{FeatureMask, FeatureVector, HANDCRAFTED_DIM};
use facegate::seed::rng_for;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_model(rng: &mut ChaCha8Rng) -> MlpModel {
    let mut m = init_model(FeatureMask::Ff, &TrainConfig { seed: rng.random(), ..Default::default() });
    let n = Normal::new(0.0, 0.3).unwrap();
    m.b1.iter_mut().for_each(|b| *b = n.sample(rng));
    m.b2 = [n.sample(rng), n.sample(rng)];
    m
}

fn pre_activations(m: &MlpModel, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..HIDDEN_UNITS)
        .map(|j| m.b1[j] + m.w1[j * d..(j + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

fn param(m: &mut MlpModel, group: usize, i: usize) -> &mut f64 {
    match group {
        0 => &mut m.w1[i],
        1 => &mut m.b1[i],
        2 => &mut m.w2[i],
        _ => &mut m.b2[i],
    }
}

#[test]
fn analytic_gradients_match_central_differences() {
    const EPS: f64 = 1e-4;
    let mut rng = rng_for(2024, "test/gradcheck");
    let mut draws = 0;
    let mut worst: f64 = 0.0;
    while draws < 12 {
        let mut model = random_model(&mut rng);
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..HANDCRAFTED_DIM).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        // Skip draws with a unit close enough to the ReLU kink for a step of
        // EPS to cross it.
        let bound = EPS * (1.0 + xs.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()))) * 10.0;
        if xs.iter().any(|x| pre_activations(&model, x).iter().any(|p| p.abs() < bound)) {
            continue;
        }
        draws += 1;
        let labels = [Label::Subject, Label::Bystander, Label::Bystander];
        let batch: Vec<(&[f64], Label)> = xs.iter().map(|x| x.as_slice()).zip(labels).collect();
        let (_, g) = model.backward(&batch).unwrap();
        let analytic: [&[f64]; 4] = [&g.w1, &g.b1, &g.w2, &g.b2];
        for (group, grads) in analytic.iter().enumerate() {
            for (i, &a) in grads.iter().enumerate() {
                let orig = *param(&mut model, group, i);
                *param(&mut model, group, i) = orig + EPS;
                let up = model.loss(&batch).unwrap();
                *param(&mut model, group, i) = orig - EPS;
                let down = model.loss(&batch).unwrap();
                *param(&mut model, group, i) = orig;
                let numeric = (up - down) / (2.0 * EPS);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
                assert!(rel < 1e-3, "group {group} index {i}: analytic {a} numeric {numeric}");
            }
        }
    }
    eprintln!("worst relative error {worst:e}");
}

#[test]
fn dropout_matches_inference_in_expectation() {
    let mut rng = rng_for(5, "test/dropout-model");
    let mut model = random_model(&mut rng);
    model.dropout_rate = 0.5;
    let x: Vec<f64> = (0..HANDCRAFTED_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let expected = model.hidden::<ChaCha8Rng>(&x, None).unwrap();
    let draws = 4000;
    let mut sums = vec![0.0; HIDDEN_UNITS];
    let mut drop_rng = rng_for(6, "test/dropout-draws");
    for _ in 0..draws {
        for (s, h) in sums.iter_mut().zip(model.hidden(&x, Some(&mut drop_rng)).unwrap()) {
            *s += h;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / draws as f64).collect();
    // Each draw of unit j is h_j * Bernoulli(1-p) / (1-p): variance h_j^2 p / (1-p).
    let p = model.dropout_rate;
    let var_factor = p / (1.0 - p);
    let total_mean: f64 = means.iter().sum();
    let total_expected: f64 = expected.iter().sum();
    let total_sigma = (expected.iter().map(|h| h * h * var_factor).sum::<f64>() / draws as f64).sqrt();
    assert!(
        (total_mean - total_expected).abs() <= 3.0 * total_sigma,
        "{total_mean} vs {total_expected} (sigma {total_sigma})"
    );
    for (m, h) in means.iter().zip(&expected) {
        let sigma = (h * h * var_factor / draws as f64).sqrt();
        assert!((m - h).abs() <= 5.0 * sigma + 1e-12, "{m} vs {h}");
    }
}

fn cluster_dataset(seed: u64) -> Vec<LabeledExample> {
    let mut rng = rng_for(seed, "test/clusters");
    (0..200)
        .map(|i| {
            let label = if i % 3 == 0 { Label::Bystander } else { Label::Subject };
            let centre = if label == Label::Bystander { -1.0 } else { 1.0 };
            let values: Vec<f64> = (0..HANDCRAFTED_DIM)
                .map(|k| if k < 4 { centre + rng.random_range(-0.6..0.6) } else { rng.random_range(-1.0..1.0) })
                .collect();
            LabeledExample {
                features: FeatureVector::new(values, FeatureMask::Ff).unwrap(),
                label,
                face_id: format!("f{i}"),
                image_id: format!("img{}", i / 2),
            }
        })
        .collect()
}

#[test]
fn separable_clusters_reach_full_training_accuracy() {
    let data = cluster_dataset(1);
    // Hard-margin check: the first coordinate alone separates the classes.
    let lo = data.iter().filter(|e| e.label == Label::Subject).map(|e| e.features.values()[0]).fold(f64::INFINITY, f64::min);
    let hi = data.iter().filter(|e| e.label == Label::Bystander).map(|e| e.features.values()[0]).fold(f64::NEG_INFINITY, f64::max);
    assert!(lo > hi, "clusters overlap");

    let out = train(&data, &TrainConfig { seed: 3, ..Default::default() }).unwrap();
    assert_eq!(out.loss_history.len(), 50);
    let correct = data.iter().filter(|e| out.model.predict(e.features.values()).unwrap().label == e.label).count();
    assert_eq!(correct, data.len());

    let again = train(&data, &TrainConfig { seed: 3, ..Default::default() }).unwrap();
    assert_eq!(again.loss_history, out.loss_history);
    assert_eq!(again.model, out.model);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = cluster_dataset(2);
    let config = TrainConfig { seed: 4, learning_rate: 0.0, epochs: 3, ..Default::default() };
    let out = train(&data, &config).unwrap();
    let init = init_model(FeatureMask::Ff, &config);
    assert_eq!(out.model.w1, init.w1);
    assert_eq!(out.model.w2, init.w2);
    assert_eq!(out.model.b1, init.b1);
    assert_eq!(out.model.b2, init.b2);
}

#[test]
fn softmax_normalised_and_shift_invariant() {
    let mut rng = rng_for(8, "test/softmax");
    for _ in 0..50 {
        let mut m = random_model(&mut rng);
        let x: Vec<f64> = (0..HANDCRAFTED_DIM).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lp = m.log_probs(&x).unwrap();
        assert!((lp[0].exp() + lp[1].exp() - 1.0).abs() < 1e-9);
        let before = m.predict(&x).unwrap();
        let shift = rng.random_range(-20.0..20.0);
        m.b2 = [m.b2[0] + shift, m.b2[1] + shift];
        let after = m.predict(&x).unwrap();
        assert_eq!(before.label, after.label);
        assert!((before.bystander_probability - after.bystander_probability).abs() < 1e-9);
    }
}
