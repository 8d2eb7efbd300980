//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the terminal; exits nonzero when a gating
//! criterion fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cgf_core::cgf::{form_consistent_groups, CgfConfig, CgfResult};
use cgf_core::cluster::{hc_aecs, Linkage};
use cgf_core::grouplearn::{predict, GroupModelBundle};
use cgf_core::ingest::load_dataset;
use cgf_core::mapping::{infer_with_groups, MappingMethod, TrainReference};
use cgf_core::pipeline::{self, files, PipelineConfig, RunManifest};
use cgf_core::selftest::{self, fixtures, oracles};
use cgf_core::DistanceMeasureId;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg.into()) }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let suite = selftest::gradcheck_suite(&[0, 1, 2, 3, 4]).map_err(err)?;
    let elapsed = started.elapsed();
    ensure(suite.passed(), format!("{:?}", suite.first_failure))?;
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("5 seeds, max relative error {:.2e}, {:.2?}", suite.max_error, elapsed))
}

fn clustering_oracle() -> Outcome {
    let suite = selftest::clustering_suite(200, 2024).map_err(err)?;
    ensure(suite.passed(), format!("{} failures, first: {:?}", suite.failures, suite.first_failure))?;
    Ok(format!("{} instance x linkage x measure cases identical", suite.cases))
}

fn distance_oracles() -> Outcome {
    let suites = selftest::distance_suite(100, 2024).map_err(err)?;
    let mut parts = Vec::new();
    for s in &suites {
        ensure(s.passed(), format!("{}: {:?}", s.name, s.first_failure))?;
        parts.push(format!("{} {:.1e}", s.name.trim_end_matches(" oracle"), s.max_error));
    }
    Ok(parts.join(", "))
}

fn cgf_recovery() -> Outcome {
    let cfg = CgfConfig::default();
    for seed in 0..20 {
        let (aecs, truth) = fixtures::planted_blobs(seed);
        let out = form_consistent_groups(&aecs, &cfg).map_err(err)?;
        let ari = oracles::adjusted_rand_index(&out.grouping.assignment, &truth);
        ensure(out.grouping.k == 3 && ari == 1.0, format!("seed {seed}: K={} ARI={ari}", out.grouping.k))?;
    }
    for seed in 0..50 {
        let aecs = fixtures::adversarial(seed);
        let out = form_consistent_groups(&aecs, &cfg).map_err(|e| format!("adversarial {seed}: {e}"))?;
        let bound = cfg.effective_k_max(aecs.rows()) - cfg.k_start + 2;
        ensure(out.trace.len() <= bound, format!("adversarial {seed}: {} iterations", out.trace.len()))?;
    }
    Ok("20/20 planted seeds K=3 ARI=1; 50/50 adversarial runs terminated".into())
}

fn measure_selection() -> Outcome {
    let (aecs, truth) = fixtures::anisotropic(7);
    let out = hc_aecs(&aecs, 2, Linkage::Average).map_err(err)?;
    ensure(out.measure == DistanceMeasureId::Mahalanobis, format!("anisotropic selected {}", out.measure))?;
    for c in &out.candidates {
        let ari = oracles::adjusted_rand_index(&c.assignment, &truth);
        let correct = c.measure == DistanceMeasureId::Mahalanobis;
        ensure((ari == 1.0) == correct, format!("anisotropic {} ARI {ari}", c.measure))?;
    }
    let (aecs, _) = fixtures::isotropic_line(7);
    let iso = hc_aecs(&aecs, 3, Linkage::Average).map_err(err)?;
    ensure(
        iso.candidates.iter().all(|c| c.assignment == iso.candidates[0].assignment),
        "isotropic partitions differ across measures",
    )?;
    ensure(iso.measure == DistanceMeasureId::Chebyshev, format!("isotropic selected {}", iso.measure))?;
    Ok("anisotropic -> MAHALANOBIS, isotropic tie -> CHEBYSHEV".into())
}

fn run_synthetic(dir: &Path, seed: u64, single_group: bool) -> Result<PipelineConfig, String> {
    let mut cfg = PipelineConfig::synthetic(dir, seed);
    cfg.train.single_group = single_group;
    pipeline::cmd_ingest(&cfg).map_err(err)?;
    pipeline::cmd_train(&cfg).map_err(err)?;
    pipeline::cmd_infer(&cfg).map_err(err)?;
    Ok(cfg)
}

fn end_to_end(dir: &Path) -> Outcome {
    let started = Instant::now();
    run_synthetic(dir, 0, false)?;
    let elapsed = started.elapsed();
    let metrics: pipeline::MetricsReport =
        serde_json::from_slice(&std::fs::read(dir.join(files::METRICS)).map_err(err)?).map_err(err)?;
    let grouped = metrics.grouped[&metrics.headline_method].f1_macro;
    let baseline = metrics.baseline.as_ref().ok_or("no baseline metrics")?.f1_macro;
    ensure(grouped >= 0.9, format!("grouped macro-F1 {grouped:.3}"))?;
    ensure(baseline <= 0.6, format!("baseline macro-F1 {baseline:.3}"))?;
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!("grouped macro-F1 {grouped:.3} vs baseline {baseline:.3}, {elapsed:.2?}"))
}

fn self_mapping(dir: &Path) -> Outcome {
    let (train, _) = load_dataset(&dir.join(files::TRAIN_DATASET)).map_err(err)?;
    let aecs = pipeline::load_aecs(&dir.join(files::TRAIN_AECS)).map_err(err)?;
    let cgf: CgfResult = serde_json::from_slice(&std::fs::read(dir.join(files::TRAIN_CGF)).map_err(err)?).map_err(err)?;
    let bundle = GroupModelBundle::load(&dir.join(files::GROUP_MODELS)).map_err(err)?;
    let train_ref = TrainReference { bundle: &bundle, aecs: &aecs, mahalanobis: &cgf.mahalanobis };
    let grouping = &bundle.grouping;
    for method in MappingMethod::ALL {
        let (labels, report) = infer_with_groups(train_ref, &train, &aecs, grouping, method).map_err(err)?;
        let identity: Vec<usize> = (0..grouping.k).collect();
        ensure(report.chosen() == identity, format!("{method} mapped {:?}", report.chosen()))?;
        for g in 0..grouping.k {
            let members = grouping.members(g);
            let own = predict(&bundle, g, &train.subset(&members).map_err(err)?, &aecs.subset(&members).map_err(err)?)
                .map_err(err)?;
            ensure(members.iter().zip(&own).all(|(&i, &p)| labels[i] == p), format!("{method}: group {g} predictions differ"))?;
        }
    }
    Ok(format!("{} groups map to themselves under CR_CR and AVG", grouping.k))
}

fn single_group(dir: &Path) -> Outcome {
    run_synthetic(dir, 0, true)?;
    let grouped = pipeline::read_predictions(&dir.join(files::PREDICTIONS)).map_err(err)?;
    let baseline = pipeline::read_predictions(&dir.join(files::BASELINE_PREDICTIONS)).map_err(err)?;
    ensure(grouped == baseline, "forced single group differs from baseline")?;
    let a = GroupModelBundle::load(&dir.join(files::GROUP_MODELS)).map_err(err)?;
    let b = GroupModelBundle::load(&dir.join(files::BASELINE_MODEL)).map_err(err)?;
    let bits = |m: &GroupModelBundle| m.models[0].params.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(bits(&a) == bits(&b), "model weights differ")?;
    Ok(format!("{} predictions and all weights bit-identical", grouped.len()))
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    run_synthetic(a, 3, false)?;
    run_synthetic(b, 3, false)?;
    let ma = RunManifest::load(a).map_err(err)?;
    let mb = RunManifest::load(b).map_err(err)?;
    ensure(!ma.artifacts.is_empty(), "no artifacts recorded")?;
    ensure(ma.artifacts == mb.artifacts, "artifact digests differ between runs")?;
    Ok(format!("{} artifact digests identical across two runs", ma.artifacts.len()))
}

/// Reproduction harness on the real corpus. Informational only.
fn uah_harness(root: &Path, dir: &Path) -> Outcome {
    let mut cfg = PipelineConfig::default();
    cfg.paths.dataset_root = Some(root.to_path_buf());
    cfg.paths.output_dir = dir.to_path_buf();
    let ingest = pipeline::cmd_ingest(&cfg).map_err(err)?;
    let train = pipeline::cmd_train(&cfg).map_err(err)?;
    let infer = pipeline::cmd_infer(&cfg).map_err(err)?;
    let near = |got: usize, want: f64| (got as f64 - want).abs() <= 0.02 * want;
    let mut notes = vec![format!(
        "windows {}/{} of {}x{}",
        ingest.train_windows, ingest.test_windows, ingest.timesteps, ingest.channels
    )];
    let mut ok = near(ingest.train_windows, 4184.0) && near(ingest.test_windows, 1046.0);
    ok &= ingest.timesteps == 64 && ingest.channels == 6;
    notes.push(format!("measure {:?}, K {:?}", train.measure, train.groups));
    ok &= train.measure == Some(DistanceMeasureId::Chebyshev) && train.groups == Some(3);
    let grouped = infer.metrics.grouped.get(&infer.metrics.headline_method).map(|m| m.accuracy);
    let baseline = infer.metrics.baseline.as_ref().map(|m| m.accuracy);
    notes.push(format!("accuracy grouped {grouped:?} baseline {baseline:?}"));
    ok &= matches!((grouped, baseline), (Some(g), Some(b)) if g >= b);
    if ok { Ok(notes.join("; ")) } else { Err(notes.join("; ")) }
}

fn report(name: &str, outcome: &Outcome, gating: bool) -> bool {
    match outcome {
        Ok(detail) => println!("ACCEPTANCE PASS  {name}: {detail}"),
        Err(detail) if gating => println!("ACCEPTANCE FAIL  {name}: {detail}"),
        Err(detail) => println!("ACCEPTANCE INFO  {name} (non-gating, not met): {detail}"),
    }
    outcome.is_ok() || !gating
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let sub = |name: &str| -> PathBuf { tmp.path().join(name) };
    let mut ok = true;
    ok &= report("gradient correctness", &gradient_correctness(), true);
    ok &= report("clustering oracle equivalence", &clustering_oracle(), true);
    ok &= report("distance and statistic oracles", &distance_oracles(), true);
    ok &= report("consistent group recovery", &cgf_recovery(), true);
    ok &= report("measure selection", &measure_selection(), true);
    let e2e = end_to_end(&sub("xor"));
    ok &= report("end-to-end benefit on XOR heterogeneity", &e2e, true);
    let mapping = if sub("xor").join(files::GROUP_MODELS).exists() {
        self_mapping(&sub("xor"))
    } else {
        Err("no trained run to map".into())
    };
    ok &= report("self-mapping consistency", &mapping, true);
    ok &= report("single-group degeneracy", &single_group(&sub("single")), true);
    ok &= report("determinism", &determinism(&sub("det_a"), &sub("det_b")), true);
    match std::env::var_os("UAH_DRIVESET_ROOT").map(PathBuf::from).filter(|p| p.is_dir()) {
        Some(root) => {
            report("UAH reproduction harness", &uah_harness(&root, &sub("uah")), false);
        }
        None => println!("ACCEPTANCE SKIP  UAH reproduction harness (non-gating): set UAH_DRIVESET_ROOT to the corpus"),
    }
    if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
