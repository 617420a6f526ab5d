use etvalloc::etvmodel::{
    ce_mse_loss, esj_loss, etv_from_outputs, grad_check, loss, sigmoid, train, Batch, EsjModel, HeadOutputs, LossKind,
    TrainConfig,
};
use etvalloc::sim::auc;
use etvalloc::{FundType, Instance, Observation, UserRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn out(p: f64, mu: f64, sigma: f64) -> HeadOutputs {
    HeadOutputs { p, mu, sigma }
}

fn pos(amount: f64) -> Observation {
    Observation::new(0, 0, true, amount).unwrap()
}

fn neg() -> Observation {
    Observation::new(0, 0, false, 0.0).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

#[test]
fn esj_golden_values() {
    let s = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    // v = 1, so the amount is e - 1 and the shifted amount e
    assert!(close(esj_loss(&[pos(std::f64::consts::E - 1.0)], &[out(1.0, 1.0, s)]).unwrap(), 1.0));
    assert!(close(esj_loss(&[neg()], &[out(0.5, 0.0, s)]).unwrap(), 0.0));
    assert!(esj_loss(&[neg()], &[out(1e-300, 0.3, 0.7)]).unwrap().abs() < 1e-12);
}

#[test]
fn mixed_batch_matches_scripted_oracle() {
    let batch = [pos(10.0), neg(), pos(0.5)];
    let outputs = [out(0.3, 2.0, 0.7), out(0.2, 0.5, 1.2), out(0.9, 0.1, 0.3)];
    // independent evaluation of the three per-sample formulas, averaged
    let expected = [
        (LossKind::Esj, 1.7398541657245514),
        (LossKind::Ziln, 1.76433373638785),
        (LossKind::CeMse, 0.6780354838949315),
    ];
    for (kind, want) in expected {
        let got = loss(kind, &batch, &outputs).unwrap();
        assert!(close(got, want), "{kind:?}: {got} vs {want}");
    }
}

#[test]
fn ce_mse_off_by_one() {
    let v = 1.5f64;
    let l = ce_mse_loss(&[pos(v.exp_m1())], &[out(1.0, v + 1.0, 1.0)]).unwrap();
    assert!(close(l, 1.0));
}

#[test]
fn prediction_formula() {
    assert_eq!(etv_from_outputs(out(0.0, 3.0, 1.0)), 0.0);
    assert_eq!(etv_from_outputs(out(1.0, 0.0, 0.0)), 0.0);
    assert!(close(etv_from_outputs(out(0.5, 101f64.ln(), 0.0)), 50.0));
}

/// Random small model with nonzero head biases and a mixed batch.
fn random_case(seed: u64, kind: LossKind) -> (EsjModel, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (du, df) = (rng.random_range(1..4), rng.random_range(0..3));
    let hidden: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(2..6)).collect();
    let mut model = EsjModel::new(du, df, &hidden, 0.05, kind, &mut rng).unwrap();
    model.head_p.bias[0] = rng.random_range(-2.0..2.0);
    model.head_mu.bias[0] = rng.random_range(-1.0..2.0);
    model.head_sigma.bias[0] = rng.random_range(-1.0..1.0);
    let n = rng.random_range(3..12);
    let mut inputs = Vec::with_capacity(n);
    let mut observations = Vec::with_capacity(n);
    for i in 0..n {
        inputs.push((0..du + df).map(|_| StandardNormal.sample(&mut rng)).collect());
        let converted = i % 2 == 0 || rng.random_bool(0.3);
        let amount = if converted { rng.random_range(0.1f64..3.0).exp_m1() } else { 0.0 };
        observations.push(Observation::new(0, 0, converted, amount).unwrap());
    }
    (model, Batch { inputs, observations })
}

#[test]
fn gradients_match_finite_differences() {
    for kind in LossKind::ALL {
        for seed in 0..20 {
            let (model, batch) = random_case(seed, kind);
            let err = grad_check(&model, &batch, kind, 1e-5).unwrap();
            assert!(err < 1e-4, "{kind:?} seed {seed}: {err}");
        }
    }
}

fn linear_data(n: usize, seed: u64) -> (Instance, Vec<Observation>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_p = [1.2, -0.8, 0.6, 0.4];
    let w_mu = [0.5, 0.3, -0.4, 0.2];
    let mut users = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n);
    let mut p_true = Vec::with_capacity(n);
    for id in 0..n {
        let x: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
        let dot = |w: &[f64; 4]| w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        let p = sigmoid(dot(&w_p) - 1.0);
        let converted = rng.random_bool(p);
        let amount = if converted {
            Normal::new(2.0 + dot(&w_mu), 0.5).unwrap().sample(&mut rng).max(0.01).exp_m1()
        } else {
            0.0
        };
        obs.push(Observation::new(id, 0, converted, amount).unwrap());
        p_true.push(p);
        users.push(UserRecord { id, risk_tolerance: 0, features: x });
    }
    let fund = FundType { id: 0, risk_level: 0, demand: n, features: vec![] };
    (Instance::new(users, vec![fund]).unwrap(), obs, p_true)
}

#[test]
fn learned_p_approaches_bayes_auc() {
    let (inst, obs, _) = linear_data(50_000, 1);
    let model = train(&inst, &obs, &TrainConfig::default()).unwrap().model;
    let (test, test_obs, p_true) = linear_data(20_000, 2);
    let labels: Vec<bool> = test_obs.iter().map(|o| o.converted).collect();
    let learned: Vec<f64> = test.users().iter().map(|u| model.forward(&u.features, &[]).unwrap().p).collect();
    let bayes = auc(&p_true, &labels).unwrap();
    let got = auc(&learned, &labels).unwrap();
    assert!(got >= 0.95 * bayes, "learned {got} vs Bayes {bayes}");
}

#[test]
fn training_is_bitwise_reproducible() {
    let (inst, obs, _) = linear_data(3_000, 3);
    let cfg = TrainConfig { max_epochs: 5, ..TrainConfig::default() };
    let a = train(&inst, &obs, &cfg).unwrap();
    let b = train(&inst, &obs, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.log, b.log);
}
