//! Configuration handling and end-to-end runs of the `fracflow` binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use fracflow::fullmodel::SimulationConfig;
use fracflow_cli::{cmd_sweep, load, parse_str, ConfigError, SweepOptions};

const SMALL: &str = r#"
[geometry]
matrix_nx = 6
ny = 6

[scaling]
kappa = -1.0
lambda = -1.0

[materials.matrix]
alpha = 0.423
n = 2.06
theta_s = 0.396
theta_r = 0.131
k_s = 5.74e-7

[materials.fracture]
alpha = 0.500
n = 7.09
theta_s = 0.469
theta_r = 0.190
k_s = 3.507e-5

[time]
end_time = 0.45
dt = 0.015

[initial]
value = -3.0

[[bcs]]
subdomain = "m1"
side = "bottom"
condition = { kind = "neumann", inflow = 0.5 }

[[bcs]]
subdomain = "m2"
side = "top"
condition = { kind = "dirichlet", head = -3.0 }

[sweep]
epsilons = [1.0, 0.1]
fracture_nx = [6, 3]
"#;

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/figure5.cfg")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn fracflow(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fracflow")).args(args).output().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn empty_config_lists_every_missing_key() {
    match parse_str("") {
        Err(ConfigError::Missing(keys)) => {
            assert!(keys.len() >= 17, "{keys:?}");
            for k in ["geometry.matrix_nx", "scaling.kappa", "materials.fracture.k_s", "time.dt", "initial.value"] {
                assert!(keys.iter().any(|m| m == k), "{k} not reported");
            }
        }
        other => panic!("expected missing keys, got {other:?}"),
    }
}

#[test]
fn unsupported_regime_is_rejected_before_running() {
    let text = SMALL.replace("lambda = -1.0", "lambda = 0.0");
    let err = parse_str(&text).unwrap_err();
    assert!(err.to_string().contains("kappa = -1"), "{err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let text = SMALL.replace("ny = 6", "ny = 6\nnz = 4");
    assert!(matches!(parse_str(&text), Err(ConfigError::Syntax(m)) if m.contains("nz")));
}

#[test]
fn bundled_config_is_the_reference_setup() {
    let input = load(&bundled()).unwrap();
    let cfg = &input.config;
    assert_eq!(cfg.sweep_members().len(), 5);
    for (eps, nx) in fracflow::fullmodel::REFERENCE_SWEEP {
        let ours = cfg.simulation(eps, cfg.fracture_nx_for(eps).unwrap()).unwrap();
        let reference = SimulationConfig::reference(eps, nx).unwrap();
        assert_eq!(ours.resolution, reference.resolution);
        assert_eq!(ours.regime, reference.regime);
        assert_eq!(ours.boundary, reference.boundary);
        assert_eq!((ours.end_time, ours.dt), (reference.end_time, reference.dt));
        assert!((ours.porosity_ratio / reference.porosity_ratio - 1.0).abs() < 1e-15);
        assert!((ours.conductivity_ratio / reference.conductivity_ratio - 1.0).abs() < 1e-15);
        assert_eq!(ours.matrix.law(), reference.matrix.law());
        assert_eq!(ours.fracture.law(), reference.fracture.law());
    }
}

#[test]
fn run_writes_fields_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.cfg", SMALL);
    let out = tmp.path().join("out");
    let o = fracflow(&["run", cfg.to_str().unwrap(), "--epsilon", "1", "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    assert_eq!(manifest["steps"], 30);
    assert_eq!(manifest["epsilon"], 1.0);
    assert_eq!(manifest["snapshots"].as_array().unwrap().len(), 2);
    for f in manifest["outputs"].as_array().unwrap() {
        let name = f["path"].as_str().unwrap();
        let bytes = std::fs::read(out.join(name)).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), fracflow_cli::commands::sha256_hex(&bytes), "{name}");
    }
    let field = read(&out, "field_t0.450000.csv");
    assert!(field.starts_with("x,y,subdomain,psi,saturation"));
    // 6x6 per matrix block plus 6x6 fracture cells, plus the header
    assert_eq!(field.lines().count(), 1 + 3 * 36);
    assert!(read(&out, "field_t0.180000.vtk").contains("RECTILINEAR_GRID"));
}

#[test]
fn runs_are_byte_identical_and_reproducible_from_the_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.cfg", SMALL);
    let run = |cfg: &Path, dir: &str| {
        let out = tmp.path().join(dir);
        let o = fracflow(&["run", cfg.to_str().unwrap(), "--model", "effective", "--output-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run(&cfg, "a");
    let b = run(&cfg, "b");
    let c = run(&a.join("resolved_config.toml"), "c");
    for name in ["field_t0.180000.csv", "field_t0.450000.csv", "metadata.csv", "interface_reports.csv"] {
        assert_eq!(read(&a, name), read(&b, name), "{name} differs between runs");
        assert_eq!(read(&a, name), read(&c, name), "{name} differs after re-running the echo");
    }
}

#[test]
fn one_member_sweep_gives_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("epsilons = [1.0, 0.1]", "epsilons = [0.1]").replace("fracture_nx = [6, 3]", "fracture_nx = [3]");
    let input = load(&write_config(tmp.path(), "one.cfg", &text)).unwrap();
    let (_, table) = cmd_sweep(
        &input,
        &SweepOptions {
            jobs: Some(1),
            output_dir: tmp.path().join("sweep"),
        },
    )
    .unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(read(&tmp.path().join("sweep"), "convergence.csv").lines().count(), 2);
}

#[test]
fn variant_v_sweep_produces_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("kappa = -1.0", "kappa = 0.0")
        .replace("lambda = -1.0", "lambda = 0.0")
        .replace("end_time = 0.45", "end_time = 0.09");
    let cfg = write_config(tmp.path(), "v.cfg", &text);
    let out = tmp.path().join("sweep");
    let o = fracflow(&["sweep", cfg.to_str().unwrap(), "--jobs", "1", "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&out, "convergence.csv");
    assert_eq!(csv.lines().count(), 3);
    let manifest: serde_json::Value = serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    assert_eq!(manifest["variant"], "V");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = write_config(tmp.path(), "empty.cfg", "");
    assert_eq!(fracflow(&["check", missing.to_str().unwrap()]).status.code(), Some(2));
    let nowhere = tmp.path().join("nope.cfg");
    assert_eq!(fracflow(&["check", nowhere.to_str().unwrap()]).status.code(), Some(2));
    let ok = write_config(tmp.path(), "small.cfg", SMALL);
    let o = fracflow(&["check", ok.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    // an epsilon without a fracture resolution is a configuration error
    let out = tmp.path().join("x");
    let o = fracflow(&["run", ok.to_str().unwrap(), "--epsilon", "0.5", "--output-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fracflow(&["frobnicate"]).status.code(), Some(2));
}
