//! Acceptance checks driven through the installed binary: stage-level
//! rerun determinism and an end-to-end synthetic recovery.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

fn run(out: &Path, args: &[&str]) {
    let output = Command::new(env!("CARGO_BIN_EXE_biodiv-zoner"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary should spawn");
    assert!(
        output.status.success(),
        "stage {:?} failed in {}:\n{}",
        args,
        out.display(),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn full_pipeline(out: &Path) {
    let truth = out.join("truth_labels.csv");
    let truth = truth.to_str().unwrap();
    run(out, &["simulate", "--seed", "42"]);
    run(out, &["profiles"]);
    run(out, &["smooth"]);
    run(out, &["variogram"]);
    run(out, &["basis"]);
    let fit_args = [
        "fit", "--k", "3", "--lambda1", "0.001", "--lambda2", "0.1", "--seed", "7",
        "--n-init", "4",
    ];
    run(out, &fit_args);
    run(
        out,
        &[
            "select",
            "--k-grid",
            "2,3,4",
            "--lambda1-grid",
            "0.001",
            "--lambda2-grid",
            "0.1",
            "--seed",
            "7",
        ],
    );
    run(out, &["--emit-svg", "zone", "--truth", truth]);
}

/// Every regular file in the run directory except the per-stage summaries,
/// which carry wall-clock timings by design.
fn artifact_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().into_string().unwrap();
        if !entry.file_type().unwrap().is_file() || name.ends_with("_summary.json") {
            continue;
        }
        out.insert(name, std::fs::read(entry.path()).unwrap());
    }
    out
}

fn summary(dir: &Path, stage: &str) -> serde_json::Value {
    let raw = std::fs::read(dir.join(format!("{stage}_summary.json"))).unwrap();
    serde_json::from_slice(&raw).unwrap()
}

#[test]
fn criterion_9_rerun_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    full_pipeline(&dir_a);
    full_pipeline(&dir_b);

    let bytes_a = artifact_bytes(&dir_a);
    let bytes_b = artifact_bytes(&dir_b);
    let names: Vec<&String> = bytes_a.keys().collect();
    assert_eq!(
        names,
        bytes_b.keys().collect::<Vec<_>>(),
        "the two runs produced different artifact sets"
    );
    for (name, data) in &bytes_a {
        assert_eq!(data, &bytes_b[name], "artifact {name} differs between identical runs");
    }

    // Rerunning single stages in place must leave every artifact intact.
    run(&dir_a, &["smooth"]);
    run(
        &dir_a,
        &["fit", "--k", "3", "--lambda1", "0.001", "--lambda2", "0.1", "--seed", "7", "--n-init", "4"],
    );
    let after = artifact_bytes(&dir_a);
    for (name, data) in &bytes_a {
        assert_eq!(data, &after[name], "artifact {name} changed on an in-place rerun");
    }
    assert!(names.len() >= 15, "expected a full artifact set, found {}", names.len());
    println!("criterion 9: PASS ({} artifacts byte-identical across reruns)", names.len());
}

#[test]
fn cli_pipeline_recovers_zones() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    full_pipeline(&dir);

    let zone = summary(&dir, "zone");
    let ari = zone["ari_against_truth"].as_f64().expect("zone summary reports an ARI");
    assert!(ari >= 0.9, "end-to-end ARI {ari} below 0.9");

    let select = summary(&dir, "select");
    assert_eq!(
        select["best_bic"]["k"].as_u64(),
        Some(3),
        "BIC should recover the three simulated zones, got {}",
        select["best_bic"]
    );

    let fit = summary(&dir, "fit");
    let sizes: Vec<u64> = fit["cluster_sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(sizes.iter().sum::<u64>(), 140, "every cell must be assigned");
    println!(
        "cli recovery: PASS (ARI {ari:.3}, best-by-BIC K=3, cluster sizes {sizes:?})"
    );
}
