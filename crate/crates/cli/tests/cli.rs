use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vlasov-ctrl"));
    c.env("RUST_LOG", "warn")
        .env_remove("VLASOV_CTRL_OUTPUT_DIR");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_LANDAU: &str = r#"
preset = "landau"
[grid]
n_x = 16
n_v = 16
[time]
t_final = 2.0
n_t = 20
[electrons]
n_particles = 4000
[ions]
n_particles = 4000
[analysis]
damping_window = [0.0, 2.0]
"#;

#[test]
fn shipped_configs_validate() {
    for name in [
        "landau.toml",
        "two_stream.toml",
        "confinement.toml",
        "smoke.toml",
    ] {
        let o = bin()
            .arg("validate")
            .arg(configs().join(name))
            .output()
            .unwrap();
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
}

#[test]
fn validate_print_fills_in_the_preset() {
    let o = bin()
        .args(["validate", "--print"])
        .arg(configs().join("two_stream.toml"))
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("static_ions = true"), "{text}");
    assert!(text.contains("v_ts = 3.0"), "{text}");
}

#[test]
fn missing_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[grid]\np_max = 4.0\nv_max = 6.0\nn_x = 8\n").unwrap();
    let o = bin().arg("validate").arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_v"), "{}", stderr(&o));
}

#[test]
fn invalid_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "preset = \"landau\"\n[time]\nn_t = 0\n").unwrap();
    let o = bin().arg("run").arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn run_writes_outputs_into_the_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    std::fs::write(&path, SMALL_LANDAU).unwrap();
    let out = dir.path().join("out");
    let o = bin()
        .arg("run")
        .arg(&path)
        .env("VLASOV_CTRL_OUTPUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["summary.toml", "diagnostics.csv", "control.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let diag = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert!(diag.starts_with("k,t,electric_energy,"));
    assert_eq!(diag.lines().count(), 22);
    let summary: toml::Table = std::fs::read_to_string(out.join("summary.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(summary["preset"].as_str(), Some("landau"));
    assert_eq!(summary["n_t"].as_integer(), Some(20));
}
