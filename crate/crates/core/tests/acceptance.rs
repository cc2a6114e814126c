//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines are always
//! printed.

use std::time::{Duration, Instant};

use bootsc::assignment::brute_force_assignment;
use bootsc::baselines::{
    classical_spectral, kmeans_lloyd, Bandwidth, SpectralConfig, DEFAULT_K_NEIGHBOR,
};
use bootsc::cluster_head::{assignment_logits, soft_kmeans_objective, PrototypeBank};
use bootsc::config::parse_config;
use bootsc::data::{gen_dataset, Dataset, DatasetKind};
use bootsc::linalg::{qr_decompose, DenseMatrix};
use bootsc::metrics::{brute_force_accuracy, evaluate};
use bootsc::network::{Gradients, ModelState};
use bootsc::spectral::{
    orthogonal_penalty, orthogonalize, row_normalize, row_softmax, spectral_objective,
    spectral_objective_trace, straight_through, OrthMode,
};
use bootsc::trainer::{fit, objective, predict, OrthSetting, TrainConfig, TrainHistory, Trainer};
use bootsc::transport::{exact_ot_oracle, sinkhorn_marginal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MOONS_CONF: &str = include_str!("../../../configs/moons.conf");
const BLOBS_CONF: &str = include_str!("../../../configs/blobs.conf");
const ABLATION_CONF: &str = include_str!("../../../configs/ablation.conf");
const DATA_SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

fn accuracy(model: &ModelState, ds: &Dataset) -> (f64, Vec<usize>) {
    let (labels, _) = predict(model, &ds.features).unwrap();
    (
        evaluate(ds.labels.as_ref().unwrap(), &labels).unwrap().acc,
        labels,
    )
}

fn reference_values() -> Outcome {
    let z = DenseMatrix::from_rows(&[[-0.94, 0.34], [0.87, 0.50]]).unwrap();
    let p = orthogonalize(&z, OrthMode::Procrustes)
        .unwrap()
        .inconsistency;
    let q = orthogonalize(&z, OrthMode::Qr).unwrap().inconsistency;
    outcome(
        (p - 0.49).abs() <= 0.02 && (q - 2.31).abs() <= 0.05,
        format!("procrustes={p:.4} (0.49±0.02) qr={q:.4} (2.31±0.05)"),
    )
}

fn procrustes_minimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_gap, mut qr_beats) = (f64::INFINITY, 0);
    for _ in 0..100 {
        let z = gaussian(16, 4, &mut rng);
        let best = orthogonalize(&z, OrthMode::Procrustes)
            .unwrap()
            .inconsistency;
        for _ in 0..100 {
            let cand = qr_decompose(&gaussian(16, 4, &mut rng)).unwrap().q;
            worst_gap = worst_gap.min(z.frobenius_distance(&cand) - best);
        }
        if orthogonalize(&z, OrthMode::Qr).unwrap().inconsistency < best - 1e-9 {
            qr_beats += 1;
        }
    }
    outcome(
        worst_gap >= -1e-9 && qr_beats == 0,
        format!("min(candidate − procrustes)={worst_gap:.3e} (≥ −1e−9), qr wins={qr_beats}"),
    )
}

fn sinkhorn_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst_residual = 0.0f64;
    for _ in 0..20 {
        let cost = uniform(32, 32, 0.0, 1.0, &mut rng);
        let rows: Vec<f64> = (0..32).map(|_| rng.gen_range(0.5..1.5)).collect();
        let mut cols: Vec<f64> = (0..32).map(|_| rng.gen_range(0.5..1.5)).collect();
        let scale = rows.iter().sum::<f64>() / cols.iter().sum::<f64>();
        cols.iter_mut().for_each(|c| *c *= scale);
        let (plan, _) = sinkhorn_marginal(&cost, &rows, &cols, 0.05, 1e-9, 100_000).unwrap();
        worst_residual = worst_residual
            .max(plan.row_marginal_residual)
            .max(plan.col_marginal_residual);
    }
    let (mut worst_rel, mut oracle_mismatch) = (0.0f64, 0.0f64);
    let ones = vec![1.0; 8];
    for _ in 0..20 {
        let cost = uniform(8, 8, 0.0, 1.0, &mut rng);
        let exact = exact_ot_oracle(&cost, &ones, &ones).unwrap().cost(&cost);
        let (_, brute) = brute_force_assignment(&cost);
        oracle_mismatch = oracle_mismatch.max((exact - brute).abs());
        let (plan, _) = sinkhorn_marginal(&cost, &ones, &ones, 1e-3, 1e-9, 100_000).unwrap();
        worst_rel = worst_rel.max((plan.cost(&cost) - exact).abs() / exact);
    }
    outcome(
        worst_residual <= 1e-6 && worst_rel <= 0.01 && oracle_mismatch < 1e-12,
        format!(
            "max residual={worst_residual:.2e} (≤1e−6), max objective gap={:.4}% (≤1%), oracle vs brute force={oracle_mismatch:.1e}",
            100.0 * worst_rel
        ),
    )
}

const FD_STEP: f64 = 1e-6;
const FD_REL: f64 = 1e-4;

fn fd_agree(a: f64, n: f64, scale: f64) -> bool {
    (a - n).abs() <= FD_REL * a.abs().max(n.abs()).max(1e-3 * scale)
}

fn flat_grads(g: &Gradients) -> Vec<f64> {
    let mut v = Vec::new();
    for l in &g.layers {
        v.extend_from_slice(l.weight.as_slice());
        v.extend_from_slice(&l.bias);
    }
    v.extend_from_slice(g.prototypes.as_slice());
    v.extend([g.log_tau_a, g.log_tau_c]);
    v
}

fn param_mut(m: &mut ModelState, mut idx: usize) -> &mut f64 {
    for l in &mut m.layers {
        let w = l.weight.as_mut_slice();
        if idx < w.len() {
            return &mut w[idx];
        }
        idx -= w.len();
        if idx < l.bias.len() {
            return &mut l.bias[idx];
        }
        idx -= l.bias.len();
    }
    let p = m.prototypes.as_mut_slice();
    if idx < p.len() {
        return &mut p[idx];
    }
    idx -= p.len();
    if idx == 0 {
        &mut m.log_tau_a
    } else {
        &mut m.log_tau_c
    }
}

/// Worst violation ratio `|a − n| / allowed` over every parameter of a
/// small model; ≤ 1 means all entries agree.
fn full_model_check(orth: OrthSetting, keep_diagonal: bool, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TrainConfig {
        batch_size: 8,
        hidden: vec![6],
        embed_dim: 3,
        orth,
        keep_diagonal,
        eta: 0.5,
        ..TrainConfig::default()
    };
    let mut model = ModelState::init(&cfg.layer_dims(4), 2, &mut rng).unwrap();
    for l in &mut model.layers {
        l.bias.iter_mut().for_each(|b| *b = rng.gen_range(0.1..0.5));
    }
    model.log_tau_a = 0.3f64.ln();
    model.log_tau_c = 0.4f64.ln();
    let x1 = uniform(8, 4, -1.0, 1.0, &mut rng);
    let x2 = uniform(8, 4, -1.0, 1.0, &mut rng);
    let (_, grads, frozen) = objective(&model, [&x1, &x2], &cfg, None).unwrap();
    let analytic = flat_grads(&grads);
    let scale = analytic.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let total = |m: &ModelState| {
        objective(m, [&x1, &x2], &cfg, Some(&frozen))
            .unwrap()
            .0
            .total
    };
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = model.clone();
        *param_mut(&mut plus, i) += FD_STEP;
        let mut minus = model.clone();
        *param_mut(&mut minus, i) -= FD_STEP;
        let n = (total(&plus) - total(&minus)) / (2.0 * FD_STEP);
        let allowed = FD_REL * a.abs().max(n.abs()).max(1e-3 * scale);
        worst = worst.max((a - n).abs() / allowed);
    }
    worst
}

fn matrix_check(
    analytic: &DenseMatrix,
    point: &DenseMatrix,
    f: impl Fn(&DenseMatrix) -> f64,
) -> bool {
    let scale = analytic.max_abs().max(1e-8);
    (0..point.as_slice().len()).all(|i| {
        let mut p = point.clone();
        p.as_mut_slice()[i] += FD_STEP;
        let mut m = point.clone();
        m.as_mut_slice()[i] -= FD_STEP;
        fd_agree(
            analytic.as_slice()[i],
            (f(&p) - f(&m)) / (2.0 * FD_STEP),
            scale,
        )
    })
}

fn gradient_suite() -> Outcome {
    let cases = [
        ("procrustes", OrthSetting::Mode(OrthMode::Procrustes), false),
        ("qr", OrthSetting::Mode(OrthMode::Qr), false),
        ("none", OrthSetting::Mode(OrthMode::None), false),
        ("penalty", OrthSetting::Penalty(0.7), false),
        ("complete", OrthSetting::Mode(OrthMode::Procrustes), true),
    ];
    let mut failed = Vec::new();
    let mut worst = 0.0f64;
    for (i, (name, orth, keep)) in cases.into_iter().enumerate() {
        let w = full_model_check(orth, keep, 200 + i as u64);
        worst = worst.max(w);
        if w > 1.0 {
            failed.push(name.to_string());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(210);
    let z = uniform(8, 3, -1.0, 1.0, &mut rng);
    let w = uniform(8, 3, -1.0, 1.0, &mut rng);
    let inner = |m: &DenseMatrix| {
        m.as_slice()
            .iter()
            .zip(w.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    if !matrix_check(&row_normalize(&z).backward(&w), &z, |m| {
        inner(&row_normalize(m).value)
    }) {
        failed.push("row normalization".into());
    }
    let (_, pg) = orthogonal_penalty(&z, 1.3);
    if !matrix_check(&pg, &z, |m| orthogonal_penalty(m, 1.3).0) {
        failed.push("orthogonal penalty".into());
    }
    let z_new = orthogonalize(&z, OrthMode::Procrustes).unwrap().z_new;
    let st = straight_through(&z, &z_new).unwrap();
    if st.value.max_abs_diff(&z_new) > 1e-14 || st.backward(&w) != w {
        failed.push("straight-through".into());
    }
    outcome(
        failed.is_empty(),
        format!(
            "worst full-model ratio={worst:.3} (≤1 means within 1e−4 rel); failures: {failed:?}"
        ),
    )
}

fn algebraic_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let (mut trace_err, mut kmeans_err) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.gen_range(2..12);
        let d = rng.gen_range(1..6);
        let w = uniform(n, n, -1.0, 1.0, &mut rng);
        let z = gaussian(n, d, &mut rng);
        let a = spectral_objective(&w, &z).unwrap();
        let b = spectral_objective_trace(&w, &z).unwrap();
        trace_err = trace_err.max((a - b).abs() / a.abs().max(1.0));
    }
    for _ in 0..1000 {
        let b = rng.gen_range(2..20);
        let d = rng.gen_range(2..6);
        let k = rng.gen_range(2..6);
        let z = row_normalize(&gaussian(b, d, &mut rng)).value;
        let bank = PrototypeBank::from_raw(&gaussian(k, d, &mut rng)).unwrap();
        let p = row_softmax(&uniform(b, k, -2.0, 2.0, &mut rng), 1.0);
        let h = assignment_logits(&z, &bank).unwrap();
        let lhs = soft_kmeans_objective(&z, &bank, &p).unwrap();
        let ph: f64 = p
            .as_slice()
            .iter()
            .zip(h.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let rhs = 2.0 * b as f64 - 2.0 * ph;
        kmeans_err = kmeans_err.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    outcome(
        trace_err <= 1e-10 && kmeans_err <= 1e-10,
        format!("trace identity err={trace_err:.2e}, soft k-means identity err={kmeans_err:.2e} (≤1e−10)"),
    )
}

fn blobs(separation: f64) -> Dataset {
    gen_dataset(
        DatasetKind::Blobs {
            k: 4,
            dim: 8,
            separation,
        },
        2000,
        1.0,
        DATA_SEED,
    )
    .unwrap()
}

fn diagonal_ablation() -> Outcome {
    let ds = blobs(5.0);
    let base = parse_config(ABLATION_CONF).unwrap();
    let b = base.batch_size as f64;
    let run = |keep_diagonal: bool| {
        let cfg = TrainConfig {
            keep_diagonal,
            ..base.clone()
        };
        let (model, history) = fit(&ds.features, &cfg).unwrap();
        (
            history.records.last().unwrap().intensity,
            accuracy(&model, &ds).0,
        )
    };
    let (keep_int, keep_acc) = run(true);
    let (free_int, free_acc) = run(false);
    let chance = 1.0 / 4.0;
    let keep_ok = keep_int < 0.05 * b && (keep_acc - chance).abs() <= 0.15;
    let free_ok = free_int > 0.5 * b && free_acc >= 0.95;
    outcome(
        keep_ok && free_ok,
        format!(
            "keep-diagonal: intensity={keep_int:.3} (<{:.1}) acc={keep_acc:.4} (chance {chance}±0.15); \
             diagonal-free: intensity={free_int:.1} (>{:.1}) acc={free_acc:.4} (≥0.95)",
            0.05 * b,
            0.5 * b
        ),
    )
}

struct MoonsRun {
    acc: f64,
    kmeans_acc: f64,
    history: TrainHistory,
}

fn moons_run() -> MoonsRun {
    let ds = gen_dataset(DatasetKind::Moons, 1000, 0.05, DATA_SEED).unwrap();
    let cfg = parse_config(MOONS_CONF).unwrap();
    let (model, history) = fit(&ds.features, &cfg).unwrap();
    let km = kmeans_lloyd(&ds.features, 2, 10, 0).unwrap();
    MoonsRun {
        acc: accuracy(&model, &ds).0,
        kmeans_acc: evaluate(ds.labels.as_ref().unwrap(), &km.labels)
            .unwrap()
            .acc,
        history,
    }
}

fn desk_clustering(moons: &MoonsRun) -> Outcome {
    let ds = blobs(10.0);
    let (model, _) = fit(&ds.features, &parse_config(BLOBS_CONF).unwrap()).unwrap();
    let (blob_acc, blob_labels) = accuracy(&model, &ds);
    let nonempty = (0..4).all(|c| blob_labels.contains(&c));

    let rings = gen_dataset(DatasetKind::Rings, 1000, 0.05, DATA_SEED).unwrap();
    let y = rings.labels.as_ref().unwrap();
    let sc = classical_spectral(
        &rings.features,
        &SpectralConfig {
            bandwidth: Bandwidth::SelfTuning(DEFAULT_K_NEIGHBOR),
            num_clusters: 2,
        },
        0,
    )
    .unwrap();
    let ring_acc = evaluate(y, &sc.labels).unwrap().acc;
    let ring_km = evaluate(y, &kmeans_lloyd(&rings.features, 2, 10, 0).unwrap().labels)
        .unwrap()
        .acc;

    let pass = moons.acc >= 0.95
        && moons.acc > moons.kmeans_acc
        && blob_acc >= 0.98
        && nonempty
        && ring_acc >= 0.99
        && ring_km <= 0.75;
    outcome(
        pass,
        format!(
            "moons acc={:.4} (≥0.95, k-means {:.4}); blobs acc={blob_acc:.4} (≥0.98, all clusters used: {nonempty}); \
             rings spectral acc={ring_acc:.4} (≥0.99), k-means {ring_km:.4} (≤0.75)",
            moons.acc, moons.kmeans_acc
        ),
    )
}

fn orthogonality_emergence(moons: &MoonsRun) -> Outcome {
    let r = &moons.history.records;
    let tenth = (r.len() / 10).max(1);
    let mean = |s: &[bootsc::trainer::EpochRecord]| {
        s.iter().map(|e| e.inconsistency).sum::<f64>() / s.len() as f64
    };
    let first = mean(&r[..tenth]);
    let last = mean(&r[r.len() - tenth..]);
    outcome(
        last < first,
        format!("mean inconsistency first 10%={first:.4}, last 10%={last:.4}"),
    )
}

/// Mutual information, entropies and pair counts evaluated directly from
/// the contingency table.
fn direct_nmi_ari(table: &[&[f64]]) -> (f64, f64) {
    let n: f64 = table.iter().flat_map(|r| r.iter()).sum();
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..table[0].len())
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let h = |v: &[f64]| {
        -v.iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| c / n * (c / n).ln())
            .sum::<f64>()
    };
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0.0 {
                mi += c / n * (c * n / (rows[i] * cols[j])).ln();
            }
        }
    }
    let nmi = mi / ((h(&rows) + h(&cols)) / 2.0);
    let c2 = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = table.iter().flat_map(|r| r.iter()).map(|&c| c2(c)).sum();
    let a: f64 = rows.iter().map(|&x| c2(x)).sum();
    let b: f64 = cols.iter().map(|&x| c2(x)).sum();
    let expected = a * b / c2(n);
    let ari = (index - expected) / ((a + b) / 2.0 - expected);
    (nmi, ari)
}

fn metrics_validation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let mut mismatches = 0;
    for _ in 0..100 {
        let k = rng.gen_range(1..=6);
        let n = rng.gen_range(1..60);
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        if evaluate(&y, &p).unwrap().acc != brute_force_accuracy(&y, &p) {
            mismatches += 1;
        }
    }
    let r = evaluate(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
    let (nmi, ari) = direct_nmi_ari(&[&[1.0, 1.0], &[0.0, 2.0]]);
    let pinned = r.acc == 0.75 && (r.nmi - nmi).abs() < 1e-12 && (r.ari - ari).abs() < 1e-12;
    outcome(
        mismatches == 0 && pinned,
        format!(
            "brute-force mismatches={mismatches}/100; hand example acc={} nmi={:.6} (direct {nmi:.6}) ari={:.6} (direct {ari:.6})",
            r.acc, r.nmi, r.ari
        ),
    )
}

fn reproducibility() -> Outcome {
    let ds = gen_dataset(DatasetKind::Moons, 300, 0.05, DATA_SEED).unwrap();
    let mut cfg = parse_config(MOONS_CONF).unwrap();
    cfg.epochs = 15;
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let mut t = Trainer::new(&cfg, &ds.features).unwrap();
            t.run_until(&ds.features, cfg.epochs).unwrap();
            let (labels, _) = predict(&t.model, &ds.features).unwrap();
            (
                t.history.to_text(),
                evaluate(ds.labels.as_ref().unwrap(), &labels).unwrap(),
            )
        })
        .collect();
    let same_fit = runs[0] == runs[1] && !runs[0].0.is_empty();

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("moons.csv");
    ds.save(&data, &[]).unwrap();
    let conf = dir.path().join("moons.conf");
    std::fs::write(&conf, format!("{MOONS_CONF}epochs = 15\n")).unwrap();
    let (train_dir, eval_dir) = (dir.path().join("train"), dir.path().join("eval"));
    let s = |p: &std::path::Path| p.to_str().unwrap().to_string();
    let train_code = bootsc::cli::run([
        "bootsc".into(),
        "train".into(),
        "--config".into(),
        s(&conf),
        "--dataset".into(),
        s(&data),
        "--out".into(),
        s(&train_dir),
    ]);
    let eval_code = bootsc::cli::run([
        "bootsc".into(),
        "eval".into(),
        "--checkpoint".into(),
        s(&train_dir.join("checkpoint.bin")),
        "--dataset".into(),
        s(&data),
        "--out".into(),
        s(&eval_dir),
    ]);
    let read = |p: std::path::PathBuf| std::fs::read(p).unwrap_or_default();
    let train_report = read(train_dir.join("report.txt"));
    let same_eval = train_code == 0
        && eval_code == 0
        && !train_report.is_empty()
        && train_report == read(eval_dir.join("report.txt"));
    let cli_history_matches = read(train_dir.join("history.txt")) == runs[0].0.as_bytes();
    outcome(
        same_fit && same_eval && cli_history_matches,
        format!(
            "identical fits: {same_fit}; eval report == train report: {same_eval}; CLI history == library history: {cli_history_matches}"
        ),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let wanted = |n: usize| filter.is_empty() || filter.iter().any(|f| f == &n.to_string());
    let mut failures = 0;
    let mut report = |n: usize, name: &str, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(n) {
            return;
        }
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        let pass = o.pass && elapsed <= budget;
        if !pass {
            failures += 1;
        }
        println!(
            "{} [{n:>2}] {name}: {} [{:.1}s, budget {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    };
    let secs = Duration::from_secs;
    report(
        1,
        "orthogonalization reference values",
        secs(1),
        &mut reference_values,
    );
    report(
        2,
        "procrustes minimality",
        secs(10),
        &mut procrustes_minimality,
    );
    report(
        3,
        "sinkhorn correctness",
        secs(30),
        &mut sinkhorn_correctness,
    );
    report(4, "gradient suite", secs(60), &mut gradient_suite);
    report(
        5,
        "algebraic identities",
        secs(10),
        &mut algebraic_identities,
    );
    report(6, "diagonal ablation", secs(600), &mut diagonal_ablation);
    let moons = (wanted(7) || wanted(8)).then(|| {
        let t = Instant::now();
        let m = moons_run();
        let d = t.elapsed();
        println!(
            "     two-moons training run: {:.1}s (counted in criterion 7)",
            d.as_secs_f64()
        );
        (m, d)
    });
    if let Some((m, d)) = &moons {
        report(
            7,
            "desk-scale clustering",
            secs(900).saturating_sub(*d),
            &mut || desk_clustering(m),
        );
        report(8, "orthogonality emergence", secs(1), &mut || {
            orthogonality_emergence(m)
        });
    }
    report(9, "metrics validation", secs(60), &mut metrics_validation);
    report(10, "reproducibility", secs(300), &mut reproducibility);
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
