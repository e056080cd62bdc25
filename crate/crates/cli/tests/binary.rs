use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soliton-lab")).args(args).output().unwrap()
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shipped_spectrum_configs_pass() {
    let out = tempfile::tempdir().unwrap();
    for name in ["product-spectrum", "sphere-spectrum", "sphere-entropy"] {
        let job = if name.ends_with("entropy") { "entropy" } else { "spectrum" };
        let o = bin(&[job, "--config", s(&shipped(name)), "--out", s(out.path())]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let table = String::from_utf8(o.stdout).unwrap();
        assert!(table.starts_with("experiment,quantity,expectation,measured,deviation,verdict"));
        assert!(table.lines().skip(1).all(|l| l.ends_with(",pass")), "{table}");
        assert!(out.path().join(name).join("record.json").is_file());
    }
    assert!(fs::read_to_string(out.path().join("sphere-spectrum/spectrum.csv")).unwrap().starts_with("index,eigenvalue"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let text = fs::read_to_string(shipped("product-spectrum")).unwrap();

    let failing = dir.path().join("failing.toml");
    fs::write(&failing, text.replace("\"1.0 +- 1e-10\"", "\"0.5 +- 1e-10\"")).unwrap();
    let o = bin(&["spectrum", "--config", s(&failing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("top_eigenvalue,0.5 +- 1e-10,1.000000000000e0,+5.000000e-1,fail"), "{table}");

    // same record name again: immutable
    let o = bin(&["spectrum", "--config", s(&failing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("immutable"));

    // wrong subcommand for the config
    let o = bin(&["flow", "--config", s(&shipped("product-spectrum")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));

    // invalid config: diagnostic with line, and no outputs
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, fs::read_to_string(shipped("product-instability")).unwrap().replace("horizon = 2.0", "horizon = -2.0")).unwrap();
    let clean = dir.path().join("clean");
    let o = bin(&["flow", "--config", s(&bad), "--out", s(&clean)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:16: solver.horizon"), "{err}");
    assert!(!clean.exists());
}

#[test]
fn suite_runs_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let configs = dir.path().join("configs");
    fs::create_dir(&configs).unwrap();
    for name in ["product-spectrum", "product-instability", "sphere-entropy"] {
        fs::copy(shipped(name), configs.join(format!("{name}.toml"))).unwrap();
    }
    let out = dir.path().join("out");
    let o = bin(&["suite", s(&configs), "--out", s(&out), "--workers", "1", "--tolerance-scale", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table.lines().count(), 1 + 4 + 3 + 3);
    assert!(table.contains("growth_rate,2 +- 0.2,"), "{table}");
    let mut names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["product-instability", "product-spectrum", "sphere-entropy"]);
}

#[test]
fn suite_rejects_duplicate_names_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("copy.toml");
    fs::copy(shipped("product-spectrum"), &copy).unwrap();
    let out = dir.path().join("out");
    let o = bin(&["suite", s(&shipped("product-spectrum")), s(&copy), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("experiment.name"));
    assert!(!out.exists());
}
