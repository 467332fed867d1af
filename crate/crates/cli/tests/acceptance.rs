//! End-to-end acceptance criteria. Each test prints one line of the form
//! `[criterion N] PASS|FAIL ...` straight to stderr, bypassing capture.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use disgan_core::classifier::{freeze, hinge_loss, train_classifier, ClassifierArch, ClassifierConfig, ClassifierNet};
use disgan_core::data::{Dataset, DatasetSpec, Generator as DataGenerator, Label};
use disgan_core::diff::{Rng, Tape, Tensor};
use disgan_core::explain::{auc, distance_curve_report, DistanceCurveReport};
use disgan_core::gan::{
    discriminator_losses, generator_losses, term_gradients, Conditioning, GanBundle, GanConfig, LossTerm, Mapping,
    QuadBatch,
};
use disgan_core::geometry::{self, ClampCounter};
use disgan_core::persist;
use disgan_core::pipeline::{run_algorithm1, traditional_augmentation, RunOutput, TrainConfig};

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[criterion {n}] {verdict} {detail}");
}

fn tiny_bundle(seed: u64) -> GanBundle {
    let mut rng = Rng::new(seed);
    let ccfg = ClassifierConfig {
        hidden: 4,
        penultimate: 4,
        ..Default::default()
    };
    let aux = Arc::new(freeze(&ClassifierNet::new(2, &ccfg, &mut rng)));
    let gcfg = GanConfig {
        generator_hidden: vec![4],
        discriminator_hidden: vec![4],
        ..Default::default()
    };
    GanBundle::new(aux, &gcfg, &mut rng).unwrap()
}

fn random_rows(rng: &mut Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)]).collect()
}

fn term_value(bundle: &GanBundle, batch: &QuadBatch, cond: &Conditioning, term: LossTerm) -> f64 {
    if let LossTerm::Disc(m) = term {
        return discriminator_losses(bundle, batch, cond).unwrap()[m.index()];
    }
    let l = generator_losses(bundle, batch, cond).unwrap();
    match term {
        LossTerm::Gen(m) => l.gen[m.index()],
        LossTerm::VerDis => l.ver_dis.total(),
        LossTerm::HorDis => l.hor_dis.total(),
        LossTerm::InterCyc => l.inter_cyc.total(),
        LossTerm::IntraCyc => l.intra_cyc.total(),
        LossTerm::VerObjective => l.verdisgan(&bundle.weights),
        LossTerm::HorObjective => l.hordisgan(&bundle.weights),
        LossTerm::Disc(_) => unreachable!(),
    }
}

/// Relative error with a floor that keeps round-off on near-zero
/// gradients from dominating.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

const H: f64 = 1e-6;

fn check_gan_term(bundle: &mut GanBundle, batch: &QuadBatch, cond: &Conditioning, term: LossTerm) -> f64 {
    let analytic = term_gradients(bundle, batch, cond, term).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for (name, grad) in analytic.generators[i].clone() {
            for (k, a) in grad.iter().enumerate() {
                let probe = |delta: f64, b: &mut GanBundle| {
                    b.generators[i].params_mut().unwrap().get_mut(&name).unwrap().tensor.values_mut()[k] += delta;
                };
                probe(H, bundle);
                let up = term_value(bundle, batch, cond, term);
                probe(-2.0 * H, bundle);
                let down = term_value(bundle, batch, cond, term);
                probe(H, bundle);
                worst = worst.max(rel_err(*a, (up - down) / (2.0 * H)));
            }
        }
        for (name, grad) in analytic.discriminators[i].clone() {
            for (k, a) in grad.iter().enumerate() {
                let probe = |delta: f64, b: &mut GanBundle| {
                    b.discriminators[i].0.params.get_mut(&name).unwrap().tensor.values_mut()[k] += delta;
                };
                probe(H, bundle);
                let up = term_value(bundle, batch, cond, term);
                probe(-2.0 * H, bundle);
                let down = term_value(bundle, batch, cond, term);
                probe(H, bundle);
                worst = worst.max(rel_err(*a, (up - down) / (2.0 * H)));
            }
        }
    }
    worst
}

fn check_hinge(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let ccfg = ClassifierConfig {
        hidden: 4,
        penultimate: 4,
        ..Default::default()
    };
    let mut net = ClassifierNet::new(2, &ccfg, &mut rng);
    let rows = random_rows(&mut rng, 6);
    let x = Tensor::from_rows(&rows).unwrap();
    let labels = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let (_, s) = net.forward(&mut tape, &vars, xv).unwrap();
    let loss = disgan_core::classifier::hinge_loss_on_tape(&mut tape, s, &labels).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for head in [false, true] {
        let names: Vec<String> = {
            let p = if head { &net.head.params } else { &net.extractor.params };
            p.iter().map(|(n, _)| n.to_string()).collect()
        };
        for name in names {
            let var = if head { vars.head.get(&name) } else { vars.extractor.get(&name) }.unwrap();
            let g = grads.get(var).unwrap().to_vec();
            for (k, a) in g.iter().enumerate() {
                let eval = |delta: f64, net: &mut ClassifierNet| {
                    let p = if head { &mut net.head.params } else { &mut net.extractor.params };
                    p.get_mut(&name).unwrap().tensor.values_mut()[k] += delta;
                };
                eval(H, &mut net);
                let up = hinge_loss(&net.scores(&x).unwrap(), &labels).unwrap();
                eval(-2.0 * H, &mut net);
                let down = hinge_loss(&net.scores(&x).unwrap(), &labels).unwrap();
                eval(H, &mut net);
                worst = worst.max(rel_err(*a, (up - down) / (2.0 * H)));
            }
        }
    }
    worst
}

#[test]
fn criterion_01_gradient_oracle() {
    let start = Instant::now();
    let terms = [
        LossTerm::Disc(Mapping::X2Y),
        LossTerm::Disc(Mapping::Y2X),
        LossTerm::Disc(Mapping::X2X),
        LossTerm::Disc(Mapping::Y2Y),
        LossTerm::Gen(Mapping::X2Y),
        LossTerm::Gen(Mapping::Y2X),
        LossTerm::Gen(Mapping::X2X),
        LossTerm::Gen(Mapping::Y2Y),
        LossTerm::VerDis,
        LossTerm::HorDis,
        LossTerm::InterCyc,
        LossTerm::IntraCyc,
    ];
    let trials = 20;
    let mut worst: f64 = 0.0;
    for seed in 0..trials {
        worst = worst.max(check_hinge(seed));
        let mut bundle = tiny_bundle(seed);
        let mut rng = Rng::new(1000 + seed);
        let batch = QuadBatch::from_rows(
            &random_rows(&mut rng, 3),
            &random_rows(&mut rng, 3),
            &random_rows(&mut rng, 3),
            &random_rows(&mut rng, 3),
        )
        .unwrap();
        let cond = Conditioning::measure(bundle.aux(), &batch, false, &ClampCounter::new()).unwrap();
        for term in terms {
            worst = worst.max(check_gan_term(&mut bundle, &batch, &cond, term));
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-4 && elapsed < Duration::from_secs(10);
    report(
        1,
        pass,
        &format!("max relative error {worst:.3e} over {trials} trials x {} losses in {elapsed:.2?}", terms.len() + 1),
    );
    assert!(pass);
}

#[test]
fn criterion_02_pythagorean_identity() {
    let start = Instant::now();
    let mut rng = Rng::new(2);
    let counter = ClampCounter::new();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let w = [rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)];
        let aux = freeze(&ClassifierNet::linear(&w, rng.uniform(-1.0, 1.0)).unwrap());
        let z1 = [rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)];
        let z2 = [rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)];
        let h = geometry::horizontal_distance_counted(&aux, &z1, &z2, true, &counter).unwrap();
        let coor = geometry::coordinate_distance(&aux, &z1, &z2).unwrap();
        let dv = geometry::vertical_distance(&aux, &z1, true).unwrap() - geometry::vertical_distance(&aux, &z2, true).unwrap();
        worst = worst.max((coor * coor - h.distance * h.distance - dv * dv).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-9 && counter.get() == 0 && elapsed < Duration::from_secs(1);
    report(
        2,
        pass,
        &format!("max residual {worst:.3e}, clamp events {}, {elapsed:.2?}", counter.get()),
    );
    assert!(pass);
}

fn brute_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, c)| **c > 0.0) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, c)| **c < 0.0) {
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

#[test]
fn criterion_03_auc_oracle() {
    let start = Instant::now();
    let mut rng = Rng::new(3);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = 2 + rng.below(99);
        // coarse grid so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.below(12) as f64 / 4.0).collect();
        let mut labels: Vec<f64> = (0..n).map(|_| if rng.below(2) == 0 { -1.0 } else { 1.0 }).collect();
        labels[0] = -1.0;
        labels[1] = 1.0;
        if auc(&scores, &labels).unwrap() != brute_auc(&scores, &labels) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && elapsed < Duration::from_secs(5);
    report(3, pass, &format!("{mismatches} mismatches over 200 sets, {elapsed:.2?}"));
    assert!(pass);
}

fn toy_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        warm_epochs: epochs / 2,
        batch_size: 4,
        ..Default::default()
    }
}

fn toy_classifier() -> ClassifierConfig {
    ClassifierConfig {
        epochs: 10,
        warm_epochs: 5,
        ..Default::default()
    }
}

fn toy_dataset(n_x: usize, n_y: usize, seed: u64) -> Dataset {
    DatasetSpec {
        n_x,
        n_y,
        seed,
        ..Default::default()
    }
    .sample()
    .unwrap()
}

#[test]
fn criterion_04_frozen_aux() {
    let data = toy_dataset(12, 9, 4);
    let ccfg = toy_classifier();
    let out = run_algorithm1(&data, &ccfg, &GanConfig::default(), &toy_train_config(3), 4).unwrap();
    // The aux handed to the generators is a frozen copy of the first
    // classifier, so the classifier itself is the "before" snapshot.
    let before = persist::aux_to_string(&freeze(&out.classifier));
    let after = persist::aux_to_string(out.bundle.aux());
    let pass = before == after;
    report(4, pass, &format!("serialized aux {} bytes, identical: {pass}", after.len()));
    assert!(pass);
}

#[test]
fn criterion_05_bookkeeping() {
    let mut ok = true;
    let mut details = Vec::new();
    for (m, n) in [(3, 5), (5, 3), (4, 4)] {
        // M samples in Y, N in X
        let data = toy_dataset(n, m, 5);
        let out = run_algorithm1(&data, &toy_classifier(), &GanConfig::default(), &toy_train_config(1), 5).unwrap();
        let iters = out.report.iterations_per_epoch;
        let size = out.archive.len();
        let labels_ok = out.archive.entries().iter().all(|e| {
            let want = match e.kind {
                Mapping::X2Y | Mapping::Y2Y => Label::Y,
                Mapping::Y2X | Mapping::X2X => Label::X,
            };
            e.label() == want
        });
        let per_kind = Mapping::ALL.map(|k| out.archive.entries().iter().filter(|e| e.kind == k).count());
        let good = iters == m.max(n) && size == 4 * m.max(n) && labels_ok && per_kind.iter().all(|&c| c == m.max(n));
        ok &= good;
        details.push(format!("(M={m},N={n}): {iters} iterations, {size} samples, labels ok {labels_ok}"));
    }
    report(5, ok, &details.join("; "));
    assert!(ok);
}

struct CurveRun {
    seed: u64,
    out: RunOutput,
    curve: DistanceCurveReport,
    elapsed: Duration,
}

const CURVE_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// The two-subcluster runs shared by criteria 6 and 8, one per seed.
fn curve_runs() -> &'static [CurveRun] {
    static RUNS: OnceLock<Vec<CurveRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        std::thread::scope(|scope| {
            let handles: Vec<_> = CURVE_SEEDS
                .iter()
                .map(|&seed| {
                    scope.spawn(move || {
                        let spec = DatasetSpec {
                            generator: DataGenerator::Subclusters,
                            n_x: 200,
                            n_y: 200,
                            clusters: 2,
                            seed,
                            ..Default::default()
                        };
                        let train = spec.sample().unwrap();
                        let eval = DatasetSpec { seed: 1000 + seed, ..spec }.sample().unwrap();
                        let start = Instant::now();
                        let out = run_algorithm1(
                            &train,
                            &ClassifierConfig::default(),
                            &GanConfig::default(),
                            &TrainConfig::default(),
                            seed,
                        )
                        .unwrap();
                        let elapsed = start.elapsed();
                        let curve = distance_curve_report(&out.bundle, &eval).unwrap();
                        CurveRun { seed, out, curve, elapsed }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    })
}

#[test]
fn criterion_06_distance_curves() {
    let runs = curve_runs();
    let r = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let mean = |f: &dyn Fn(&CurveRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let rv = mean(&|c| r(c.curve.vertical_r));
    let rh = mean(&|c| r(c.curve.horizontal_r));
    let slowest = runs.iter().map(|c| c.elapsed).max().unwrap();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|c| format!("seed {}: {:.3}/{:.3}", c.seed, r(c.curve.vertical_r), r(c.curve.horizontal_r)))
        .collect();
    let pass = rv >= 0.8 && rh >= 0.6 && slowest < Duration::from_secs(300);
    report(
        6,
        pass,
        &format!(
            "mean vertical r {rv:.3} (>= 0.8), mean horizontal r {rh:.3} (>= 0.6), slowest run {slowest:.1?} [{}]",
            per_seed.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_cycle_descent() {
    let mut pass = true;
    let mut details = Vec::new();
    for run in curve_runs() {
        let means = run.out.report.cycle_means();
        let (first, last) = (means[0], *means.last().unwrap());
        pass &= last < 0.3 * first;
        details.push(format!("seed {}: {first:.4} -> {last:.4} ({:.3})", run.seed, last / first));
    }
    report(8, pass, &format!("cycle loss epoch means, ratio < 0.3 [{}]", details.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_07_non_degradation() {
    let ccfg = ClassifierConfig::default();
    let mut ta_aucs = Vec::new();
    let mut cp_aucs = Vec::new();
    for seed in 0..5u64 {
        let spec = DatasetSpec {
            generator: DataGenerator::Subclusters,
            n_x: 30,
            n_y: 30,
            seed: 700 + seed,
            ..Default::default()
        };
        let train = spec.sample().unwrap();
        let test = DatasetSpec {
            n_x: 500,
            n_y: 500,
            seed: 7000 + seed,
            ..spec
        }
        .sample()
        .unwrap();
        let ta = traditional_augmentation(&train, 2, 0.1, &mut Rng::new(seed)).unwrap();
        let baseline = train_classifier(&ta, &ccfg, &mut Rng::new(seed)).unwrap();
        let out = run_algorithm1(&ta, &ccfg, &GanConfig::default(), &TrainConfig::default(), seed).unwrap();
        let x = test.features().unwrap();
        ta_aucs.push(auc(&baseline.net.scores(&x).unwrap(), &test.labels()).unwrap());
        cp_aucs.push(auc(&out.c_prime.scores(&x).unwrap(), &test.labels()).unwrap());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ta, cp) = (mean(&ta_aucs), mean(&cp_aucs));
    let pass = cp >= ta - 0.01;
    report(7, pass, &format!("mean test AUC C' {cp:.4} vs TA-only {ta:.4} (bound {:.4})", ta - 0.01));
    assert!(pass);
}

fn run_cli(dir: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_disgan"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success(), "disgan {args:?} failed");
}

#[test]
fn criterion_09_determinism() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("run.toml");
    std::fs::write(
        &cfg,
        "dataset.n_x = 24\ndataset.n_y = 18\ntrain.epochs = 2\ntrain.warm_epochs = 1\nclassifier.epochs = 5\nclassifier.warm_epochs = 2\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        run_cli(&dir, &["--config", cfg, "--seed", "11", "gen-data"]);
        run_cli(&dir, &["--config", cfg, "--seed", "11", "augment"]);
        outputs.push(dir);
    }
    let files = ["archive.csv", "bundle.model", "classifier.model", "c_prime.model", "loss_trace.csv", "augment_report.json"];
    let mut differing = Vec::new();
    for f in files {
        let a = std::fs::read(outputs[0].join(f)).unwrap();
        let b = std::fs::read(outputs[1].join(f)).unwrap();
        if a != b || a.is_empty() {
            differing.push(f);
        }
    }
    let pass = differing.is_empty();
    report(9, pass, &format!("{} artefacts compared, differing: {differing:?}", files.len()));
    assert!(pass);
}

#[test]
fn criterion_10_clamp_pathology() {
    let aux = freeze(&ClassifierNet::linear(&[2.0, 0.0], 0.0).unwrap());
    let counter = ClampCounter::new();
    let raw = geometry::horizontal_distance_counted(&aux, &[0.0, 0.0], &[1.0, 0.0], false, &counter).unwrap();
    let after_raw = counter.get();
    let normed = geometry::horizontal_distance_counted(&aux, &[0.0, 0.0], &[1.0, 0.0], true, &counter).unwrap();
    let pass = raw.clamped && raw.distance == 0.0 && after_raw == 1 && !normed.clamped && counter.get() == 1;
    report(
        10,
        pass,
        &format!(
            "raw clamped={} (counter {after_raw}), normalized clamped={} d_h={}",
            raw.clamped, normed.clamped, normed.distance
        ),
    );
    assert!(pass);
}

#[test]
fn linear_classifier_mode_is_available() {
    let cfg = ClassifierConfig {
        arch: ClassifierArch::Linear,
        ..Default::default()
    };
    let net = ClassifierNet::new(2, &cfg, &mut Rng::new(0));
    assert_eq!(net.penultimate_dim(), 2);
}
