use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use mpf_cli::config::RegretConfig;
use mpf_cli::manifest::Manifest;
use mpf_cli::plot::box_plot;
use mpf_cli::{run_phase, run_pipeline, CliError, Experiment, ExperimentConfig, Phase};
use mpf_core::networks::NetConfig;
use mpf_core::sac::TrainConfig;
use mpf_core::tpe::GenerationConfig;

fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        env: "linerunner_dir".into(),
        train: TrainConfig {
            epochs: 2,
            collect_steps: 60,
            update_iterations: 4,
            batch_size: 16,
            net: NetConfig {
                policy_hidden: vec![8],
                q_hidden: vec![8],
                encoder_hidden: vec![4],
                ..NetConfig::default()
            },
            ..TrainConfig::default()
        },
        candidates: 3,
        context_set_size: 2,
        heldout_contexts: 3,
        generation: GenerationConfig {
            k_max: 12,
            ..GenerationConfig::default()
        },
        regret: RegretConfig {
            pools: 50,
            pool_size: 2,
            heldout_contexts: Some(2),
            k_max: Some(4),
        },
        seed: 11,
        ..ExperimentConfig::default()
    }
}

fn experiment(out: &Path) -> Experiment {
    Experiment::new(tiny_config(), Path::new("."), out.to_path_buf()).unwrap()
}

/// Relative path to file bytes for every file under `dir`.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn pipeline_writes_every_artifact_and_reruns_bit_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = experiment(tmp.path());
    run_pipeline(&exp, Phase::Acquire, 1).unwrap();
    let first = snapshot(tmp.path());
    for f in [
        "candidates/candidate_000.bin",
        "candidates/candidate_002.bin",
        "curves.csv",
        "selection.csv",
        "regret.csv",
        "regret_returns.csv",
        "generation/summary.csv",
        "generation/context_000.csv",
        "generation/trace_002.csv",
        "plots/returns.svg",
        "plots/generation.svg",
        "manifest.json",
    ] {
        assert!(first.contains_key(Path::new(f)), "missing {f}");
    }
    let sel = String::from_utf8(first[Path::new("selection.csv")].clone()).unwrap();
    assert_eq!(sel.lines().count(), 4);
    assert_eq!(sel.lines().filter(|l| l.ends_with(",1")).count(), 1);

    let manifest = Manifest::load(tmp.path()).unwrap().unwrap();
    assert_eq!(manifest.candidate_seeds, vec![11, 12, 13]);
    assert!(manifest.error.is_none());
    manifest.verify(tmp.path()).unwrap();

    // A rerun checks every new hash against the manifest.
    run_pipeline(&exp, Phase::Acquire, 1).unwrap();
    assert_eq!(snapshot(tmp.path()), first);
}

#[test]
fn staged_subcommands_match_pipeline() {
    let staged = tempfile::tempdir().unwrap();
    let whole = tempfile::tempdir().unwrap();
    let a = experiment(staged.path());
    for phase in Phase::ALL {
        // thread count must not change any output
        run_phase(&a, phase, 2, &[]).unwrap();
    }
    run_pipeline(&experiment(whole.path()), Phase::Acquire, 1).unwrap();
    assert_eq!(snapshot(staged.path()), snapshot(whole.path()));
}

#[test]
fn phases_check_prerequisites_and_candidate_count() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = experiment(tmp.path());
    let e = run_phase(&exp, Phase::Generate, 1, &[]).unwrap_err();
    assert!(
        matches!(&e, CliError::Missing(p) if p.ends_with("selection.csv")),
        "{e}"
    );
    let m = Manifest::load(tmp.path()).unwrap().unwrap();
    assert_eq!(m.error.unwrap().phase, "generate");

    let e = run_phase(&exp, Phase::Select, 1, &[]).unwrap_err();
    assert!(e.to_string().contains("candidate_000.bin"), "{e}");

    run_phase(&exp, Phase::Acquire, 1, &[]).unwrap();
    std::fs::copy(
        tmp.path().join("candidates/candidate_000.bin"),
        tmp.path().join("candidates/candidate_009.bin"),
    )
    .unwrap();
    let e = run_phase(&exp, Phase::Select, 1, &[]).unwrap_err();
    assert!(
        matches!(
            e,
            CliError::CandidateCount {
                expected: 3,
                found: 4,
                ..
            }
        ),
        "{e}"
    );
    std::fs::remove_file(tmp.path().join("candidates/candidate_009.bin")).unwrap();
    run_phase(&exp, Phase::Select, 1, &[]).unwrap();
    assert!(Manifest::load(tmp.path()).unwrap().unwrap().error.is_none());
}

#[test]
fn regenerating_leaves_acquisition_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = experiment(tmp.path());
    for phase in [Phase::Acquire, Phase::Select, Phase::Generate] {
        run_phase(&exp, phase, 1, &[]).unwrap();
    }
    let before = snapshot(tmp.path());
    std::fs::remove_dir_all(tmp.path().join("generation")).unwrap();
    run_phase(&exp, Phase::Generate, 1, &[]).unwrap();
    assert_eq!(snapshot(tmp.path()), before);
}

#[test]
fn changed_artifact_fails_rerun_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = experiment(tmp.path());
    run_phase(&exp, Phase::Acquire, 1, &[]).unwrap();
    run_phase(&exp, Phase::Select, 1, &[]).unwrap();
    // Tamper with the recorded hash, as if an earlier run had written different bytes.
    let mut m = Manifest::load(tmp.path()).unwrap().unwrap();
    m.phases
        .get_mut("select")
        .unwrap()
        .insert("selection.csv".into(), "0".repeat(64));
    m.save(tmp.path()).unwrap();
    let e = run_phase(&exp, Phase::Select, 1, &[]).unwrap_err();
    assert!(
        matches!(e, CliError::HashMismatch(ref f) if f == "selection.csv"),
        "{e}"
    );
}

fn attr(svg: &str, name: &str) -> f64 {
    let key = format!("{name}=\"");
    let start = svg.find(&key).unwrap() + key.len();
    let end = start + svg[start..].find('"').unwrap();
    svg[start..end].parse().unwrap()
}

#[test]
fn box_plot_quartiles_match_reference() {
    let values: Vec<f64> = (0..32)
        .map(|i| (i as f64 * 1.7).sin() * 10.0 + i as f64 * 0.3)
        .collect();
    let svg = box_plot("returns", "R", &[("generated".into(), values)]);
    // reference values from numpy.percentile (linear interpolation)
    let expected = [
        ("data-min", -8.358146823277325),
        ("data-q1", -1.9015585138040476),
        ("data-median", 4.978939483234212),
        ("data-q3", 11.066420326723778),
        ("data-max", 17.50428962947006),
    ];
    for (name, want) in expected {
        let got = attr(&svg, name);
        assert!((got - want).abs() < 1e-12, "{name}: {got} vs {want}");
    }
    assert_eq!(attr(&svg, "data-n"), 32.0);
}

#[test]
fn binary_reports_missing_prerequisite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("exp.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&tiny_config()).unwrap()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mpf"))
        .args(["generate", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(tmp.path().join("run"))
        .env("MPF_LOG", "error")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("selection.csv"), "{stderr}");

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"candidates\": 2,\n  \"oops\": 1\n}\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mpf"))
        .args(["pipeline", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(tmp.path().join("run2"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bad.json:3"), "{stderr}");
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir().unwrap();
    for name in ["linerunner_dir.json", "ballbounce32.json", "smoke.json"] {
        let exp = Experiment::load(&dir.join(name), Some(tmp.path().to_path_buf()), None).unwrap();
        assert_eq!(exp.config_hash.len(), 64, "{name}");
    }
}
