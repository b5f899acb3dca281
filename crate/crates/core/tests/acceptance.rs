//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Exits non-zero on a failed criterion only when `ACCEPTANCE_STRICT=1`.
//! Set `ACCEPTANCE_DIR` to keep (and reuse) trained artifacts between runs,
//! and `ACCEPTANCE_ONLY=suites` to run only the checks that need no training.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{brute_aupr, brute_auroc, chi_square_p, composed_model_checks, layer_kind_checks, subset_probabilities};
use intervene_core::data::Split;
use intervene_core::harness::{
    evaluate_family, run_ablation, run_pipeline, AblationAxis, ExperimentConfig, Family, ResultsBundle, SeedArtifacts, DEFAULT_LABEL,
};
use intervene_core::interventions::{intervene, uncertainty_weights, DistanceKind, InterventionConfig, ProbedModel, StrategySpec};
use intervene_core::metrics::{aupr, auroc, Spread};
use intervene_core::models::{BlackBoxModel, ProbeLinearity, ProbeModel};
use intervene_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const INSTANCES: u64 = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn median(values: &[f64]) -> f64 {
    Spread::of(values).map(|s| s.median).unwrap_or(f64::NAN)
}

fn fmt(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut kinks = 0;
    for seed in 0..INSTANCES {
        for (name, e, k) in layer_kind_checks(seed).into_iter().chain(composed_model_checks(seed)) {
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(e);
            kinks += k;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let (name, max) = worst.iter().fold((String::new(), 0.0), |acc, (n, &e)| if e > acc.1 { (n.clone(), e) } else { acc });
    let bad: Vec<&String> = worst.iter().filter(|(_, &e)| !(e < GRAD_TOL)).map(|(n, _)| n).collect();
    Outcome::new(
        bad.is_empty() && secs < 60.0,
        format!(
            "{} checks x {INSTANCES} instances, worst {max:.2e} ({name}), failing {bad:?}, {kinks} coordinates on ReLU kinks skipped, {secs:.1}s",
            worst.len()
        ),
    )
}

fn random_scores(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.gen_range(2..=200);
    let grid = rng.gen_range(2..20);
    let tied = rng.gen_bool(0.7);
    let s: Vec<f64> = (0..n)
        .map(|_| if tied { rng.gen_range(0..grid) as f64 / grid as f64 } else { rng.gen::<f64>() })
        .collect();
    let mut l: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
    l[0] = 1.0;
    l[1] = 0.0;
    (s, l)
}

fn oracle_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (s, l) = random_scores(&mut rng);
        if auroc(&s, &l).unwrap() != brute_auroc(&s, &l) || aupr(&s, &l).unwrap() != brute_aupr(&s, &l) {
            mismatches += 1;
        }
    }
    const DRAWS: u64 = 30_000;
    let mut min_p = f64::INFINITY;
    let mut tests = 0;
    for num_concepts in [3usize, 5] {
        let c_hat: Vec<f64> = (0..num_concepts).map(|i| 0.1 + 0.85 * i as f64 / (num_concepts - 1) as f64).collect();
        for k in 1..num_concepts {
            for spec in [StrategySpec::random_subset(k), StrategySpec::uncertainty(k)] {
                let weights = match spec.kind {
                    intervene_core::interventions::StrategyKind::RandomSubset => vec![1.0; num_concepts],
                    intervene_core::interventions::StrategyKind::Uncertainty => uncertainty_weights(&c_hat, spec.eps_unc),
                };
                let exact = subset_probabilities(&weights, k);
                let mut draw_rng = ChaCha8Rng::seed_from_u64(tests);
                let mut counts = BTreeMap::new();
                for _ in 0..DRAWS {
                    let mut picked = spec.select(&c_hat, &mut draw_rng).unwrap();
                    picked.sort_unstable();
                    *counts.entry(picked).or_insert(0u64) += 1;
                }
                min_p = min_p.min(chi_square_p(&counts, &exact, DRAWS));
                tests += 1;
            }
        }
    }
    Outcome::new(
        mismatches == 0 && min_p > 0.01,
        format!("{mismatches} metric mismatches in 1000 inputs; min chi-square p {min_p:.3} over {tests} strategy tests"),
    )
}

fn stationarity_suite() -> Outcome {
    let (p, k) = (8, 4);
    let mut failures = 0;
    for i in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let bb = BlackBoxModel::<f64> {
            net: BlackBoxModel::<f64>::init(p, i % 7).net.eval(),
            slice: BlackBoxModel::<f64>::init(p, i % 7).slice,
        };
        let lin = if i % 2 == 0 { ProbeLinearity::Linear } else { ProbeLinearity::Nonlinear };
        let mut probe = ProbeModel::init(bb.representation_dim(), k, lin, &mut rng);
        probe.net.set_mode(intervene_core::neural::Mode::Eval);
        let cfg = InterventionConfig {
            distance: if i % 4 < 2 { DistanceKind::Euclidean } else { DistanceKind::Cosine },
            lambda: [0.2, 0.8, 3.2][(i % 3) as usize],
            ..Default::default()
        };
        let x = Matrix::from_fn(3, p, |_, _| rng.gen_range(-2.0..2.0));
        let model = ProbedModel::new(&bb, &probe).unwrap();
        let base = intervene_core::interventions::Intervenable::baseline(&model, &x).unwrap();
        let res = intervene(&model, &x, &base.c_hat, &cfg).unwrap();
        let same_z = res.z_edited.as_ref() == base.z.as_ref();
        let same_y = res.y_after.iter().zip(&res.y_before).all(|(a, b)| a.to_bits() == b.to_bits());
        if !(same_z && same_y) {
            failures += 1;
        }
    }
    Outcome::new(failures == 0, format!("{failures} of 100 instances moved"))
}

fn gains(bundle: &ResultsBundle, label: &str, family: Family) -> Vec<f64> {
    bundle.curve_gains(label, family).into_iter().map(|(_, g)| g).collect()
}

fn table_values(bundle: &ResultsBundle, family: Family, f: impl Fn(&intervene_core::harness::TableRow) -> Option<f64>) -> Vec<f64> {
    bundle.seeds.iter().filter_map(|&s| bundle.table_row(s, family).and_then(&f)).collect()
}

/// Trains and scores the joint CBM alone, timing each seed.
fn cbm_timings(cfg: &ExperimentConfig) -> Vec<f64> {
    cfg.seeds
        .iter()
        .map(|&seed| {
            let t = Instant::now();
            let art = SeedArtifacts::open(cfg, seed).expect("dataset");
            let model = art.family(Family::CbmJoint).expect("cbm");
            evaluate_family(&art, Family::CbmJoint, &model).expect("cbm evaluation");
            t.elapsed().as_secs_f64()
        })
        .collect()
}

fn cbm_gain(bundle: &ResultsBundle, secs: &[f64]) -> Outcome {
    let g = gains(bundle, DEFAULT_LABEL, Family::CbmJoint);
    let slowest = secs.iter().cloned().fold(0.0, f64::max);
    Outcome::new(
        g.len() == bundle.seeds.len() && median(&g) >= 0.05 && slowest < 600.0,
        format!("gains {} median {:.3} (need >= 0.05); slowest seed {slowest:.0}s", fmt(&g), median(&g)),
    )
}

fn efficacy(bundle: &ResultsBundle) -> Vec<(&'static str, Outcome)> {
    let bb = gains(bundle, DEFAULT_LABEL, Family::BlackBox);
    let ft = gains(bundle, DEFAULT_LABEL, Family::FinetunedIntervenability);
    let a = bb.len() == bundle.seeds.len() && ft.len() == bb.len() && ft.iter().zip(&bb).all(|(f, b)| f > b);

    let bb_brier = table_values(bundle, Family::BlackBox, |r| Some(r.target.brier));
    let ft_brier = table_values(bundle, Family::FinetunedIntervenability, |r| Some(r.target.brier));
    let drop: Vec<f64> = bb_brier.iter().zip(&ft_brier).map(|(b, f)| b - f).collect();
    let b = !drop.is_empty() && median(&drop) >= 0.05;

    let concept = |f| median(&table_values(bundle, f, |r| r.concept.map(|c| c.auroc)));
    let (cbm, mt, probe) = (concept(Family::CbmJoint), concept(Family::FinetunedMultitask), concept(Family::BlackBox));
    let near = |v: f64, r: f64| (v - r).abs() <= 0.1;
    let c = cbm > mt && mt > probe && near(cbm, 0.837) && near(mt, 0.784) && near(probe, 0.716);
    vec![
        ("efficacy (a) gain", Outcome::new(a, format!("fine-tuned {} vs black box {}", fmt(&ft), fmt(&bb)))),
        (
            "efficacy (b) brier",
            Outcome::new(b, format!("black box {} fine-tuned {} median drop {:.3} (need >= 0.05)", fmt(&bb_brier), fmt(&ft_brier), median(&drop))),
        ),
        (
            "efficacy (c) concept auroc",
            Outcome::new(c, format!("cbm {cbm:.3} > multitask {mt:.3} > probe {probe:.3}, each within 0.1 of 0.837/0.784/0.716")),
        ),
    ]
}

fn incomplete(dir: &Path) -> Outcome {
    let mut cfg = ExperimentConfig::desk_incomplete();
    cfg.output_dir = dir.to_path_buf();
    cfg.families = vec![Family::BlackBox, Family::CbmJoint, Family::FinetunedIntervenability];
    let bundle = run_pipeline(&cfg).expect("incomplete pipeline");
    let target = |f| median(&table_values(&bundle, f, |r| Some(r.target.auroc)));
    let (bb, cbm, ft) = (target(Family::BlackBox), target(Family::CbmJoint), target(Family::FinetunedIntervenability));
    let (g_bb, g_ft) = (
        median(&gains(&bundle, DEFAULT_LABEL, Family::BlackBox)),
        median(&gains(&bundle, DEFAULT_LABEL, Family::FinetunedIntervenability)),
    );
    Outcome::new(
        !bundle.is_partial() && bb >= cbm && ft >= cbm && g_ft > g_bb,
        format!("target auroc black box {bb:.3} fine-tuned {ft:.3} cbm {cbm:.3}; gain fine-tuned {g_ft:.3} vs black box {g_bb:.3}"),
    )
}

fn lambda_monotone(cfg: &ExperimentConfig) -> Outcome {
    let bundle = run_ablation(cfg, AblationAxis::Lambda).expect("lambda ablation");
    let mut ok = !bundle.is_partial();
    let mut parts = Vec::new();
    for &seed in &cfg.seeds {
        let losses: Vec<f64> = cfg
            .grids
            .lambdas
            .iter()
            .filter_map(|l| {
                let label = format!("lambda={l}");
                bundle.edit_stats.iter().find(|s| s.seed == seed && s.label == label).map(|s| s.median_concept_loss)
            })
            .collect();
        ok &= losses.len() == cfg.grids.lambdas.len() && losses.windows(2).all(|w| w[1] <= w[0]);
        parts.push(format!("seed {seed} {}", fmt(&losses)));
    }
    Outcome::new(ok, format!("median concept loss over lambda {:?}: {}", cfg.grids.lambdas, parts.join("; ")))
}

fn valsize(cfg: &ExperimentConfig) -> Outcome {
    let mut cfg = cfg.clone();
    cfg.grids.valsizes = vec![0.1];
    let bundle = run_ablation(&cfg, AblationAxis::Valsize).expect("valsize ablation");
    let g = gains(&bundle, "valsize=0.1", Family::FinetunedIntervenability);
    Outcome::new(
        !bundle.is_partial() && g.len() == cfg.seeds.len() && g.iter().all(|&v| v > 0.0),
        format!("fine-tuned gains at 10% validation {}", fmt(&g)),
    )
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn freeze_audits(cfg: &ExperimentConfig) -> Outcome {
    let mut problems = Vec::new();
    for &seed in &cfg.seeds {
        let art = SeedArtifacts::open(cfg, seed).expect("dataset");
        let bb = art.black_box().expect("black box");
        let probe = art.probe(cfg.probe).expect("probe");
        let probe_before = bits(&probe.net.snapshot());
        let bb_before = bits(&bb.net.snapshot());

        let val = art.view(Split::Validation);
        let ft_cfg = intervene_core::finetune::FinetuneConfig {
            intervention: cfg.intervention,
            pi: cfg.strategy,
            ..cfg.finetune
        };
        let (tuned, _) = intervene_core::finetune::finetune_intervenability(&bb, &probe, &val, &ft_cfg, seed).expect("fine-tune");
        if bits(&tuned.body_snapshot()) != bits(&bb.body_snapshot()) {
            problems.push(format!("seed {seed}: body changed by intervenability fine-tuning"));
        }
        if bits(&tuned.head_snapshot()) == bits(&bb.head_snapshot()) {
            problems.push(format!("seed {seed}: head did not train"));
        }
        if bits(&probe.net.snapshot()) != probe_before {
            problems.push(format!("seed {seed}: probe changed"));
        }
        let stored = art.finetuned_intervenability().expect("stored fine-tune");
        if bits(&stored.body_snapshot()) != bits(&bb.body_snapshot()) {
            problems.push(format!("seed {seed}: stored fine-tuned body differs"));
        }

        intervene_core::finetune::finetune_append(&bb, &val, &ft_cfg, seed).expect("append");
        if bits(&bb.net.snapshot()) != bb_before {
            problems.push(format!("seed {seed}: black box changed by append fine-tuning"));
        }
    }
    Outcome::new(problems.is_empty(), if problems.is_empty() { "bitwise equal in every seed".to_string() } else { problems.join("; ") })
}

fn work_dir() -> (PathBuf, Option<tempfile::TempDir>) {
    match std::env::var_os("ACCEPTANCE_DIR") {
        Some(d) => (PathBuf::from(d), None),
        None => {
            let tmp = tempfile::tempdir().expect("tempdir");
            (tmp.path().to_path_buf(), Some(tmp))
        }
    }
}

fn report(results: &mut Vec<(String, bool)>, name: &str, o: Outcome) {
    println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    results.push((name.to_string(), o.pass));
}

fn main() {
    let (dir, _guard) = work_dir();
    let mut results = Vec::new();
    report(&mut results, "gradient suite", gradient_suite());
    report(&mut results, "oracle suite", oracle_suite());
    report(&mut results, "stationarity suite", stationarity_suite());
    if std::env::var("ACCEPTANCE_ONLY").as_deref() == Ok("suites") {
        finish(&results);
        return;
    }

    let mut cfg = ExperimentConfig::desk();
    cfg.output_dir = dir.join("desk");
    let secs = cbm_timings(&cfg);
    let bundle = run_pipeline(&cfg).expect("desk pipeline");
    for f in &bundle.failures {
        println!("note: seed {} stage {} failed: {}", f.seed, f.stage, f.message);
    }
    report(&mut results, "cbm intervenability", cbm_gain(&bundle, &secs));
    for (name, o) in efficacy(&bundle) {
        report(&mut results, name, o);
    }
    report(&mut results, "incomplete concepts", incomplete(&dir.join("incomplete")));
    report(&mut results, "lambda ablation", lambda_monotone(&cfg));
    report(&mut results, "validation size", valsize(&cfg));
    report(&mut results, "freeze audits", freeze_audits(&cfg));
    finish(&results);
}

fn finish(results: &[(String, bool)]) {
    let failed: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() && std::env::var("ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
