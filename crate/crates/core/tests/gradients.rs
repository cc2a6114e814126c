//! Central finite-difference checks of every hand-written backward pass.

use bootsc::linalg::DenseMatrix;
use bootsc::network::{forward, Gradients, ModelState};
use bootsc::spectral::{
    affinity_loss, cross_affinity, gram_backward, orthogonal_penalty, orthogonalize,
    restore_diagonal, row_normalize, scale_normalize, straight_through, OrthMode,
};
use bootsc::trainer::{objective, OrthSetting, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL_TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Relative agreement with an absolute floor for entries that are ~0.
fn agree(analytic: f64, numeric: f64, scale: f64) -> bool {
    (analytic - numeric).abs() <= REL_TOL * analytic.abs().max(numeric.abs()).max(1e-3 * scale)
}

fn check_matrix(
    name: &str,
    analytic: &DenseMatrix,
    point: &DenseMatrix,
    f: impl Fn(&DenseMatrix) -> f64,
) {
    let scale = analytic.max_abs().max(1e-8);
    for idx in 0..point.as_slice().len() {
        let mut plus = point.clone();
        plus.as_mut_slice()[idx] += STEP;
        let mut minus = point.clone();
        minus.as_mut_slice()[idx] -= STEP;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * STEP);
        let a = analytic.as_slice()[idx];
        assert!(
            agree(a, numeric, scale),
            "{name}[{idx}]: analytic {a:e} vs numeric {numeric:e}"
        );
    }
}

fn param_slices_mut(m: &mut ModelState) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for layer in &mut m.layers {
        out.push(layer.weight.as_mut_slice());
        out.push(&mut layer.bias);
    }
    out.push(m.prototypes.as_mut_slice());
    out.push(std::slice::from_mut(&mut m.log_tau_a));
    out.push(std::slice::from_mut(&mut m.log_tau_c));
    out
}

fn grad_slices(g: &Gradients) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for layer in &g.layers {
        out.push(layer.weight.as_slice().to_vec());
        out.push(layer.bias.clone());
    }
    out.push(g.prototypes.as_slice().to_vec());
    out.push(vec![g.log_tau_a]);
    out.push(vec![g.log_tau_c]);
    out
}

fn check_full_model(orth: OrthSetting, keep_diagonal: bool, lambda: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TrainConfig {
        batch_size: 8,
        hidden: vec![6],
        embed_dim: 3,
        num_clusters: 2,
        orth,
        keep_diagonal,
        lambda,
        // soft targets keep the loss well conditioned for differencing
        eta: 0.5,
        ..TrainConfig::default()
    };
    let mut model = ModelState::init(&cfg.layer_dims(4), 2, &mut rng).unwrap();
    // nonzero biases so no sample is mapped to the origin by dead rectifiers
    for layer in &mut model.layers {
        layer
            .bias
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(0.1..0.5));
    }
    // temperatures away from the cap and from each other
    model.log_tau_a = (0.3f64).ln();
    model.log_tau_c = (0.4f64).ln();
    let x1 = random(8, 4, &mut rng);
    let x2 = random(8, 4, &mut rng);
    let (_, grads, frozen) = objective(&model, [&x1, &x2], &cfg, None).unwrap();
    let total = |m: &ModelState| {
        objective(m, [&x1, &x2], &cfg, Some(&frozen))
            .unwrap()
            .0
            .total
    };

    let analytic = grad_slices(&grads);
    let names = {
        let mut v = Vec::new();
        for l in 0..model.layers.len() {
            v.push(format!("layer{l}.weight"));
            v.push(format!("layer{l}.bias"));
        }
        v.extend(["prototypes".into(), "log_tau_a".into(), "log_tau_c".into()]);
        v
    };
    let scale = analytic
        .iter()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    for (s, name) in names.iter().enumerate() {
        for j in 0..analytic[s].len() {
            let mut plus = model.clone();
            param_slices_mut(&mut plus)[s][j] += STEP;
            let mut minus = model.clone();
            param_slices_mut(&mut minus)[s][j] -= STEP;
            let numeric = (total(&plus) - total(&minus)) / (2.0 * STEP);
            let a = analytic[s][j];
            assert!(
                agree(a, numeric, scale),
                "{orth:?} {name}[{j}]: analytic {a:e} vs numeric {numeric:e}"
            );
        }
    }
    assert!(grads.log_tau_a.abs() > 0.0 && grads.log_tau_c.abs() > 0.0);
}

#[test]
fn full_model_procrustes() {
    for seed in 0..3 {
        check_full_model(OrthSetting::Mode(OrthMode::Procrustes), false, 1.0, seed);
    }
}

#[test]
fn full_model_qr_and_none() {
    check_full_model(OrthSetting::Mode(OrthMode::Qr), false, 1.0, 10);
    check_full_model(OrthSetting::Mode(OrthMode::None), false, 0.5, 11);
}

#[test]
fn full_model_penalty_and_complete_affinity() {
    check_full_model(OrthSetting::Penalty(0.7), false, 1.5, 20);
    check_full_model(OrthSetting::Mode(OrthMode::Procrustes), true, 1.0, 21);
}

#[test]
fn clamped_temperature_has_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let cfg = TrainConfig {
        batch_size: 8,
        hidden: vec![5],
        embed_dim: 3,
        ..TrainConfig::default()
    };
    let mut model = ModelState::init(&cfg.layer_dims(4), 2, &mut rng).unwrap();
    model.log_tau_a = 0.5;
    let x = random(8, 4, &mut rng);
    let (_, grads, _) = objective(&model, [&x, &x], &cfg, None).unwrap();
    assert_eq!(grads.log_tau_a, 0.0);
    assert!(grads.log_tau_c != 0.0);
}

#[test]
fn affinity_loss_through_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let raw = random(8, 3, &mut rng);
    let target = bootsc::spectral::row_softmax(&random(8, 7, &mut rng), 0.5);
    let tau = 0.3;
    let loss = |r: &DenseMatrix| {
        let z = row_normalize(r).value;
        affinity_loss(&target, &cross_affinity(&z).unwrap(), tau)
            .unwrap()
            .loss
    };
    let normed = row_normalize(&raw);
    let ce = affinity_loss(&target, &cross_affinity(&normed.value).unwrap(), tau).unwrap();
    let grad_z = gram_backward(&restore_diagonal(&ce.grad_logits), &normed.value).unwrap();
    check_matrix("affinity/raw", &normed.backward(&grad_z), &raw, loss);

    // temperature
    let numeric = {
        let logits = cross_affinity(&normed.value).unwrap();
        let f = |t: f64| affinity_loss(&target, &logits, t).unwrap().loss;
        (f(tau + STEP) - f(tau - STEP)) / (2.0 * STEP)
    };
    assert!(agree(ce.grad_tau, numeric, 1.0));
}

#[test]
fn row_normalization_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let z = random(8, 3, &mut rng);
    let w = random(8, 3, &mut rng);
    let f = |m: &DenseMatrix| {
        let n = row_normalize(m).value;
        n.as_slice()
            .iter()
            .zip(w.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    };
    check_matrix("row_normalize", &row_normalize(&z).backward(&w), &z, f);
}

#[test]
fn orthogonal_penalty_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let z = random(8, 3, &mut rng);
    let (_, g) = orthogonal_penalty(&z, 1.3);
    check_matrix("penalty", &g, &z, |m| orthogonal_penalty(m, 1.3).0);
}

#[test]
fn frobenius_rescaling_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let z = random(8, 3, &mut rng).scale(7.0);
    let w = random(8, 3, &mut rng);
    let f = |m: &DenseMatrix| {
        let v = scale_normalize(m).value;
        v.as_slice()
            .iter()
            .zip(w.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    };
    let sc = scale_normalize(&z);
    assert!((sc.value.frobenius_norm() - 3f64.sqrt()).abs() < 1e-12);
    check_matrix("scale_normalize", &sc.backward(&w), &z, f);
}

#[test]
fn straight_through_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let z = random(8, 3, &mut rng);
    let orth = orthogonalize(&z, OrthMode::Procrustes).unwrap();
    let st = straight_through(&z, &orth.z_new).unwrap();
    // forward value is the orthogonalized matrix
    assert!(st.value.max_abs_diff(&orth.z_new) < 1e-14);
    // the surrogate z ↦ z + offset has identity Jacobian
    let w = random(8, 3, &mut rng);
    let f = |m: &DenseMatrix| {
        let v = st.apply(m).unwrap();
        v.as_slice()
            .iter()
            .zip(w.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    };
    check_matrix("straight_through", &st.backward(&w), &z, f);
    assert_eq!(st.backward(&w), w);
}

#[test]
fn encoder_layers_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let model = ModelState::init(&[4, 5, 5, 3], 2, &mut rng).unwrap();
    let x = random(8, 4, &mut rng);
    let w = random(8, 3, &mut rng);
    let (_, cache) = forward(&model, &x).unwrap();
    let grads = bootsc::network::backward(&model, &cache, &w).unwrap();
    let f = |m: &ModelState| {
        let (z, _) = forward(m, &x).unwrap();
        z.as_slice()
            .iter()
            .zip(w.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    for l in 0..3 {
        check_matrix(
            &format!("layer{l}.weight"),
            &grads.layers[l].weight,
            &model.layers[l].weight,
            |p| {
                let mut m = model.clone();
                m.layers[l].weight = p.clone();
                f(&m)
            },
        );
        let bias =
            DenseMatrix::from_vec(1, model.layers[l].bias.len(), model.layers[l].bias.clone())
                .unwrap();
        let gb = DenseMatrix::from_vec(1, grads.layers[l].bias.len(), grads.layers[l].bias.clone())
            .unwrap();
        check_matrix(&format!("layer{l}.bias"), &gb, &bias, |p| {
            let mut m = model.clone();
            m.layers[l].bias = p.as_slice().to_vec();
            f(&m)
        });
    }
}
