//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion outside `KNOWN_RED` fails.
//!
//! Run a subset by number: `cargo test --test acceptance -- 3 7`.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aapl::harness::{harmonic_mean, run_cli, Experiment, ExperimentConfig, EXIT_OK};
use aapl::losses::{adtriplet_value, triplet_value, ConstraintMode, DeltaGrid, TripletConfig};
use aapl::numcore::{finite_difference_check, Tensor};
use aapl::profiling::{
    pair_inclusion_probabilities, silhouette_scores, wrs_sample, wrs_weights, ClusterScore, SamplerWeights,
    SilhouetteReport,
};
use aapl::promptcore::{DeltaVariant, ModelVars};
use aapl::seed::{self, Stream};
use aapl::toyworld::{sample_episode, AugmentationType, FrozenEncoders, Split, NUM_AUGMENTATIONS};

// Pinned tolerances and budgets.
const GRAD_CONFIGS: usize = 100;
const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-6;
const GRAD_BUDGET_SECS: f64 = 60.0;
const SILHOUETTE_SETS: usize = 200;
const SILHOUETTE_TOL: f64 = 1e-12;
const TRANSLATION_TOL: f64 = 1e-12;
const SAMPLER_DRAWS: usize = 1_000_000;
const SAMPLER_L1_TOL: f64 = 0.01;
const DECOUPLING_SEEDS: u64 = 5;
const DECOUPLING_GAIN: f64 = 0.05;
const DECOUPLING_REQUIRED: usize = 4;
const GENERALIZATION_SEEDS: u64 = 3;
const RUN_BUDGET_SECS: f64 = 300.0;
const HM_TOL: f64 = 0.005;

/// Criteria that fail on this toy world for documented reasons (see the
/// README). They are still run and reported.
const KNOWN_RED: &[usize] = &[5];

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 9] = [
        (1, "gradient suite", gradient_suite),
        (2, "silhouette oracle", silhouette_oracle),
        (3, "loss edge cases", loss_edge_cases),
        (4, "sampler correctness", sampler_correctness),
        (5, "decoupling mechanism", decoupling),
        (6, "generalization", generalization),
        (7, "harmonic mean", harmonic_mean_values),
        (8, "determinism", determinism),
        (9, "frozen encoders and split isolation", frozen_and_isolated),
    ];
    let mut unexpected = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_RED.contains(&id);
        let tag = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag} [{id}] {name}: {} ({secs:.1} s)", o.detail);
        if !o.pass && !known {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criterion(s) failed unexpectedly");
        std::process::exit(1);
    }
}

fn small_config(rng: &mut ChaCha8Rng, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.dataset.num_classes = [4, 6, 8][rng.random_range(0..3)];
    c.dataset.per_class_count = 24;
    c.dataset.shots = 4;
    c.dataset.seed = seed;
    c.model.feature_dim = [16, 32][rng.random_range(0..2)];
    c.model.context_len = rng.random_range(1..=4);
    c.model.text_hidden = [16, 32][rng.random_range(0..2)];
    c.model.metanet_up_scale = 1.0;
    c.training.alpha = rng.random_range(0.0..2.0);
    c.training.beta = rng.random_range(0.1..2.0);
    c.training.margin = rng.random_range(0.05..0.5);
    c.training.constraint_mode = if rng.random_bool(0.5) {
        ConstraintMode::Constraints2
    } else {
        ConstraintMode::Constraints4
    };
    c.training.delta_variant = if rng.random_bool(0.5) { DeltaVariant::SameImage } else { DeltaVariant::ClassMean };
    c.profiling.samples = 2;
    c
}

/// Full episode loss (cross-entropy through the frozen text encoder plus
/// AdTriplet through the metanet) against central differences, at random
/// parameters. Points within the kink tolerance are redrawn.
fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ad);
    let (mut worst, mut passed, mut redraws, mut checked) = (0.0f64, 0, 0, 0);
    let mut errors = Vec::new();
    for i in 0..GRAD_CONFIGS {
        let cfg = small_config(&mut rng, i as u64);
        let ex = match Experiment::build(&cfg) {
            Ok(ex) => ex,
            Err(e) => {
                errors.push(format!("config {i}: {e}"));
                continue;
            }
        };
        let model = ex.init_model().expect("model");
        let shapes: Vec<Vec<usize>> = model.parameters().iter().map(|t| t.shape().to_vec()).collect();
        for _ in 0..20 {
            let params: Vec<Tensor> = shapes
                .iter()
                .map(|s| {
                    let fan_in = *s.last().unwrap() as f64;
                    Tensor::randn(s.clone(), 1.0 / fan_in.sqrt(), &mut rng)
                })
                .collect();
            let ep = sample_episode(ex.dataset(), &SamplerWeights::uniform(), &mut rng).expect("episode");
            let features = ex.episode_features(&ep).expect("features");
            let check = finite_difference_check(&params, GRAD_STEP, |tape, vars| {
                let mv = ModelVars {
                    context: vars[0],
                    down: vars[1],
                    up: vars[2],
                };
                Ok(ex.episode_loss(tape, &model, &mv, &ep, &features)?.0)
            });
            match check {
                Ok(g) if g.near_kink => redraws += 1,
                Ok(g) => {
                    worst = worst.max(g.max_relative_error);
                    checked += g.checked_coordinates;
                    if g.passes(GRAD_TOL) {
                        passed += 1;
                    }
                    break;
                }
                Err(e) => {
                    errors.push(format!("config {i}: {e}"));
                    break;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = passed == GRAD_CONFIGS && errors.is_empty() && secs < GRAD_BUDGET_SECS;
    let mut detail = format!(
        "{passed}/{GRAD_CONFIGS} configs, max rel err {worst:.2e} < {GRAD_TOL:.0e}, {checked} coordinates, \
         {redraws} near-kink redraws, {secs:.1} s < {GRAD_BUDGET_SECS} s"
    );
    if let Some(e) = errors.first() {
        detail.push_str(&format!(", first error: {e}"));
    }
    outcome(pass, detail)
}

/// Direct double loop over all point pairs.
fn brute_force_silhouette(points: &[Vec<f64>], labels: &[usize]) -> Vec<f64> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut clusters: Vec<usize> = labels.to_vec();
    clusters.sort();
    clusters.dedup();
    (0..points.len())
        .map(|i| {
            let own = labels[i];
            let mut own_sum = 0.0;
            let mut own_count = 0;
            for j in 0..points.len() {
                if j != i && labels[j] == own {
                    own_sum += dist(&points[i], &points[j]);
                    own_count += 1;
                }
            }
            if own_count == 0 {
                return 0.0;
            }
            let a = own_sum / own_count as f64;
            let mut b = f64::INFINITY;
            for &c in &clusters {
                if c == own {
                    continue;
                }
                let mut sum = 0.0;
                let mut count = 0;
                for j in 0..points.len() {
                    if labels[j] == c {
                        sum += dist(&points[i], &points[j]);
                        count += 1;
                    }
                }
                b = b.min(sum / count as f64);
            }
            if a.max(b) == 0.0 {
                0.0
            } else {
                (b - a) / a.max(b)
            }
        })
        .collect()
}

fn silhouette_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x511);
    let mut worst = 0.0f64;
    for _ in 0..SILHOUETTE_SETS {
        let k = rng.random_range(2..=5);
        let n = rng.random_range(k..=60);
        let dim = rng.random_range(1..=4);
        // the first k points cover every cluster; the rest are random
        let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        let mut points: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..dim).map(|_| l as f64 + rng.random_range(-1.5..1.5)).collect())
            .collect();
        if rng.random_bool(0.2) {
            // coincident points
            let src = points[0].clone();
            points[1] = src;
        }
        let got = silhouette_scores(&points, &labels).expect("silhouette");
        let want = brute_force_silhouette(&points, &labels);
        for (g, w) in got.per_point.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
        let overall = want.iter().sum::<f64>() / n as f64;
        worst = worst.max((got.overall - overall).abs());
    }
    outcome(
        worst <= SILHOUETTE_TOL,
        format!("{SILHOUETTE_SETS} sets, max |diff| {worst:.2e} <= {SILHOUETTE_TOL:.0e}"),
    )
}

fn loss_edge_cases() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1055);
    let mut failures = Vec::new();
    for m in [0.0, 0.2, 0.7, 3.0] {
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v = triplet_value(&a, &a, &a, m).expect("triplet");
        if v != m {
            failures.push(format!("triplet(a,a,a) = {v} for m = {m}"));
        }
    }
    let delta = vec![0.3, -1.2, 0.5];
    let equal = DeltaGrid {
        d1a: delta.clone(),
        d1b: delta.clone(),
        d2a: delta.clone(),
        d2b: delta,
    };
    let c4 = TripletConfig {
        margin: 0.2,
        constraint_mode: ConstraintMode::Constraints4,
    };
    let v = adtriplet_value(&equal, &c4).expect("adtriplet");
    if v != 0.4 {
        failures.push(format!("constraints-4 on equal deltas = {v}, expected 0.4"));
    }
    let mut worst = 0.0f64;
    for trial in 0..500 {
        let dim = rng.random_range(1..=16);
        let mut draw = || (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let grid = DeltaGrid {
            d1a: draw(),
            d1b: draw(),
            d2a: draw(),
            d2b: draw(),
        };
        let shift: Vec<f64> = (0..dim).map(|_| rng.random_range(-50.0..50.0)).collect();
        let moved = |v: &Vec<f64>| v.iter().zip(&shift).map(|(a, b)| a + b).collect::<Vec<f64>>();
        let shifted = DeltaGrid {
            d1a: moved(&grid.d1a),
            d1b: moved(&grid.d1b),
            d2a: moved(&grid.d2a),
            d2b: moved(&grid.d2b),
        };
        let cfg = TripletConfig {
            margin: 0.2,
            constraint_mode: if trial % 2 == 0 {
                ConstraintMode::Constraints4
            } else {
                ConstraintMode::Constraints2
            },
        };
        let (x, y) = (adtriplet_value(&grid, &cfg).unwrap(), adtriplet_value(&shifted, &cfg).unwrap());
        worst = worst.max((x - y).abs());
    }
    if worst > TRANSLATION_TOL {
        failures.push(format!("translation changed adtriplet by {worst:.2e}"));
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("triplet(a,a,a) = m exactly, equal deltas give 0.4, translation drift {worst:.2e} <= {TRANSLATION_TOL:.0e}")
    } else {
        failures.join("; ")
    };
    outcome(pass, detail)
}

fn report(scores: &[f64; NUM_AUGMENTATIONS]) -> SilhouetteReport {
    let per_type: BTreeMap<_, _> = AugmentationType::ALL
        .iter()
        .zip(scores)
        .map(|(&a, &s)| (a, ClusterScore { mean: s, count: 10 }))
        .collect();
    SilhouetteReport {
        per_type,
        overall: scores.iter().sum::<f64>() / NUM_AUGMENTATIONS as f64,
    }
}

fn sampler_correctness() -> Outcome {
    let scores: [f64; NUM_AUGMENTATIONS] = std::array::from_fn(|i| if i < 7 { 0.0 } else { 0.5 });
    let weights = wrs_weights(&report(&scores), 1.0).expect("weights");
    let expected = pair_inclusion_probabilities(&weights);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a3);
    let mut counts = [0usize; NUM_AUGMENTATIONS];
    for _ in 0..SAMPLER_DRAWS {
        let (a, b) = wrs_sample(&weights, &mut rng).expect("draw");
        counts[a.index()] += 1;
        counts[b.index()] += 1;
    }
    let l1: f64 = counts
        .iter()
        .zip(&expected)
        .map(|(&c, e)| (c as f64 / SAMPLER_DRAWS as f64 - e).abs())
        .sum();

    let p = weights.probs();
    let mut monotone = (0..7).all(|i| (7..14).all(|j| p[i] > p[j]));
    for _ in 0..200 {
        let s: [f64; NUM_AUGMENTATIONS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let w = wrs_weights(&report(&s), rng.random_range(0.1..5.0)).expect("weights");
        for i in 0..NUM_AUGMENTATIONS {
            for j in 0..NUM_AUGMENTATIONS {
                if s[i] < s[j] && w.probs()[i] <= w.probs()[j] {
                    monotone = false;
                }
            }
        }
    }
    outcome(
        l1 < SAMPLER_L1_TOL && monotone,
        format!(
            "pair-inclusion L1 {l1:.5} < {SAMPLER_L1_TOL} over {SAMPLER_DRAWS} draws, strict anti-monotonicity {}",
            if monotone { "holds" } else { "violated" }
        ),
    )
}

fn decoupling_config(seed: u64, alpha: f64, beta: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.dataset.seed = seed;
    c.training.alpha = alpha;
    c.training.beta = beta;
    c.training.constraint_mode = ConstraintMode::Constraints4;
    c
}

fn final_silhouette(cfg: &ExperimentConfig) -> (f64, f64) {
    let (_, m) = aapl::harness::train(cfg).expect("training");
    (m.epochs[0].silhouette.overall, m.last().silhouette.overall)
}

/// Silhouette of delta tokens by augmentation type: final epoch against
/// the first epoch and against an alpha = 0 control with the same seed.
fn decoupling() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut rows = Vec::new();
    let mut triplet_only_gain = 0.0;
    for seed in 0..DECOUPLING_SEEDS {
        let (first, last) = final_silhouette(&decoupling_config(seed, 1.0, 1.0));
        let (_, control) = final_silhouette(&decoupling_config(seed, 0.0, 1.0));
        let ok = last - first >= DECOUPLING_GAIN && last - control >= DECOUPLING_GAIN;
        wins += ok as usize;
        rows.push(format!("seed {seed}: {first:+.3} -> {last:+.3} vs control {control:+.3}"));
        // diagnostic only: the triplet term without cross-entropy
        let (f, l) = final_silhouette(&decoupling_config(seed, 1.0, 0.0));
        triplet_only_gain += (l - f) / DECOUPLING_SEEDS as f64;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        wins >= DECOUPLING_REQUIRED && secs < RUN_BUDGET_SECS,
        format!(
            "{wins}/{DECOUPLING_SEEDS} seeds gain >= {DECOUPLING_GAIN} over both first epoch and control \
             (need {DECOUPLING_REQUIRED}); {}; triplet-only mean gain {triplet_only_gain:+.3}",
            rows.join("; ")
        ),
    )
}

fn generalization() -> Outcome {
    let start = Instant::now();
    let (mut base, mut new) = (0.0, 0.0);
    let mut chance = (0.0, 0.0);
    for seed in 0..GENERALIZATION_SEEDS {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.seed = seed;
        let ex = Experiment::build(&cfg).expect("experiment");
        let ds = ex.dataset();
        chance = (
            100.0 / ds.classes_of(Split::Base).len() as f64,
            100.0 / ds.classes_of(Split::New).len() as f64,
        );
        let (_, m) = ex.train().expect("training");
        base += m.base_accuracy() / GENERALIZATION_SEEDS as f64;
        new += m.new_accuracy() / GENERALIZATION_SEEDS as f64;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        base >= 3.0 * chance.0 && new >= 2.0 * chance.1 && secs < RUN_BUDGET_SECS,
        format!(
            "mean over {GENERALIZATION_SEEDS} seeds: base {base:.2}% >= {:.2}%, new {new:.2}% >= {:.2}%",
            3.0 * chance.0,
            2.0 * chance.1
        ),
    )
}

fn harmonic_mean_values() -> Outcome {
    let a = harmonic_mean(80.47, 71.69).expect("hm").value;
    let b = harmonic_mean(95.20, 97.69).expect("hm").value;
    outcome(
        (a - 75.83).abs() <= HM_TOL && (b - 96.43).abs() <= HM_TOL,
        format!("HM(80.47, 71.69) = {a:.4}, HM(95.20, 97.69) = {b:.4}, tolerance {HM_TOL}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("run.toml");
    std::fs::write(&config, ExperimentConfig::default().to_toml_string().unwrap()).unwrap();
    let mut artifacts = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let code = run_cli(["aapl".as_ref(), "train".as_ref(), config.as_os_str(), "--out".as_ref(), out.as_os_str()]);
        if code != EXIT_OK {
            return outcome(false, format!("train exited with {code}"));
        }
        let read = |name: &str| std::fs::read(out.join(name)).expect("artifact");
        artifacts.push((read("metrics.csv"), read("checkpoint.bin")));
    }
    let (csv, ckpt) = (artifacts[0].0 == artifacts[1].0, artifacts[0].1 == artifacts[1].1);
    outcome(
        csv && ckpt,
        format!(
            "metrics.csv {} ({} bytes), checkpoint.bin {} ({} bytes)",
            if csv { "identical" } else { "differs" },
            artifacts[0].0.len(),
            if ckpt { "identical" } else { "differs" },
            artifacts[0].1.len()
        ),
    )
}

fn frozen_and_isolated() -> Outcome {
    let cfg = ExperimentConfig::default();
    let ex = Experiment::build(&cfg).expect("experiment");
    let before = ex.encoders().parameter_bits();
    let fresh = FrozenEncoders::new(cfg.encoder_config(), seed::derive(cfg.seed(), Stream::Encoders, 0))
        .expect("encoders")
        .parameter_bits();
    let (model, m) = ex.train().expect("training");
    let unchanged = model.encoders().parameter_bits() == before && ex.encoders().parameter_bits() == before;
    let pass = unchanged && before == fresh && m.new_class_accesses == 0;
    outcome(
        pass,
        format!(
            "{} encoder words bitwise {}, new-class training accesses {}",
            before.len(),
            if unchanged && before == fresh { "unchanged" } else { "CHANGED" },
            m.new_class_accesses
        ),
    )
}
