use adakv::compare::budget_for_fraction;
use adakv::report::render;
use adakv::trace::{PayloadStorage, TraceKind};
use adakv::*;

fn small_profile(kind: TraceKind) -> GeneratorProfile {
    GeneratorProfile {
        kind,
        samples: 6,
        layers: 2,
        heads: 4,
        n: 60,
        head_dim: 4,
        model_dim: 12,
        window: 4,
        ..GeneratorProfile::default()
    }
}

fn policies(window: usize) -> Vec<PolicyConfig> {
    PolicyKind::ALL
        .iter()
        .map(|&k| {
            let mut p = PolicyConfig::new(k);
            p.window_size = window;
            p
        })
        .collect()
}

#[test]
fn trace_round_trips_both_ways() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [TraceKind::Full, TraceKind::WeightsOnly] {
        let trace = generate_synthetic_trace(&small_profile(kind), 5).unwrap();
        for (name, storage) in [
            ("side.json", PayloadStorage::Sidecar),
            ("inline.json", PayloadStorage::Inline),
        ] {
            let path = dir.path().join(name);
            save_trace(&trace, &path, storage).unwrap();
            assert_eq!(load_trace(&path).unwrap(), trace);
        }
    }
}

#[test]
fn damaged_traces_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let trace = generate_synthetic_trace(&small_profile(TraceKind::WeightsOnly), 5).unwrap();
    let path = dir.path().join("t.json");
    save_trace(&trace, &path, PayloadStorage::Sidecar).unwrap();
    let sidecar = dir.path().join("t.bin");
    let mut bytes = std::fs::read(&sidecar).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&sidecar, &bytes).unwrap();
    assert!(matches!(load_trace(&path), Err(Error::Checksum(_))));

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"version\":1", "\"version\":7", 1)).unwrap();
    assert!(matches!(
        load_trace(&path),
        Err(Error::UnsupportedVersion { found: 7, .. })
    ));

    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(load_trace(&path).is_err());
}

#[test]
fn comparison_shape_and_bounds() {
    let profile = small_profile(TraceKind::Full);
    let trace = generate_synthetic_trace(&profile, 8).unwrap();
    let config = ComparisonConfig::new(vec![0.3, 0.6, 1.0], policies(profile.window));
    let report = run_comparison(&trace, &config).unwrap();
    assert_eq!(report.rows.len(), 6 * 3 * 5);
    let capacity = 4 * (60 + 4);
    for r in &report.rows {
        assert_eq!(r.budget, budget_for_fraction(r.budget_fraction, capacity));
        assert_eq!(r.seed, 8);
        assert_eq!(r.fingerprint.len(), 16);
        assert!(r.l1_loss <= r.epsilon + 1e-9 * r.epsilon.max(1.0), "{r:?}");
        assert!(r.epsilon_double_star <= r.epsilon_star + 1e-12);
        if r.budget_fraction == 1.0 {
            assert_eq!(r.l1_loss, 0.0);
            assert_eq!(r.epsilon, 0.0);
        }
    }
    // two adaptive pairs per budget
    assert_eq!(report.summaries.len(), 6);
    assert!(report.summaries.iter().all(|s| s.samples == 6));
}

#[test]
fn weights_only_traces_cannot_be_compared() {
    let trace = generate_synthetic_trace(&small_profile(TraceKind::WeightsOnly), 1).unwrap();
    let config = ComparisonConfig::new(vec![0.5], policies(4));
    assert!(matches!(
        run_comparison(&trace, &config),
        Err(Error::Capability(_))
    ));
}

#[test]
fn bad_fractions_are_rejected() {
    let trace = generate_synthetic_trace(&small_profile(TraceKind::Full), 1).unwrap();
    for f in [0.0, 1.5, f64::NAN] {
        assert!(run_comparison(&trace, &ComparisonConfig::new(vec![f], policies(4))).is_err());
    }
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let profile = small_profile(TraceKind::Full);
    let trace = generate_synthetic_trace(&profile, 2).unwrap();
    let run = |workers| {
        let mut config = ComparisonConfig::new(vec![0.4], policies(profile.window));
        config.workers = Some(workers);
        let r = run_comparison(&trace, &config).unwrap();
        (
            render(&r, ReportFormat::Csv).unwrap(),
            render(&r, ReportFormat::Json).unwrap(),
        )
    };
    assert_eq!(run(1), run(3));

    let verify = |workers| {
        let opts = VerifyOptions {
            workers: Some(workers),
            ..VerifyOptions::new(9, 30)
        };
        render(&verify_theorems(&opts).unwrap(), ReportFormat::Json).unwrap()
    };
    assert_eq!(verify(1), verify(4));
}

#[test]
fn emitted_files_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let report = verify_theorems(&VerifyOptions::new(3, 10)).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    emit_report(&report, ReportFormat::Csv, &a).unwrap();
    emit_report(&report, ReportFormat::Csv, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(emit_report(
        &report,
        ReportFormat::Csv,
        &dir.path().join("missing/x.csv")
    )
    .is_err());
}

#[test]
fn shrunken_bound_is_caught() {
    let report = verify_theorems(&VerifyOptions {
        epsilon_offset: 0.1,
        ..VerifyOptions::new(0, 200)
    })
    .unwrap();
    assert!(!report.passed());
    assert!(report.get(verify::Property::BoundSoundness).violations > 0);
}
