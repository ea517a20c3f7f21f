use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tactile_sdf::geometry::primitives::{cuboid, icosphere};
use tactile_sdf::geometry::{read_sdf_dataset, save_obj, Vec3};
use tactile_sdf::metrics::CSV_HEADER;
use tempfile::tempdir;

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tactile-sdf"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn printed_config_loads_back_unchanged() {
    let dir = tempdir().unwrap();
    let first = stdout(&cli(&["config", "--seed", "11"], dir.path()));
    assert!(first.contains("seed = 11"));
    fs::write(dir.path().join("exp.toml"), &first).unwrap();
    let second = stdout(&cli(&["config", "--config", "exp.toml"], dir.path()));
    assert_eq!(first, second);

    fs::write(dir.path().join("bad.toml"), "seed = 1\nno_such_key = 2\n").unwrap();
    let o = cli(&["config", "--config", "bad.toml"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn stages_refuse_missing_inputs() {
    let dir = tempdir().unwrap();
    let o = cli(&["train-sdf", "--out", "run"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("gen-corpus"));
}

#[test]
fn eval_and_mesh_sdf_on_files() {
    let dir = tempdir().unwrap();
    let cube = cuboid(Vec3::repeat(-0.5), Vec3::repeat(0.5));
    save_obj(&cube, dir.path().join("cube.obj")).unwrap();
    save_obj(&icosphere(3).transformed(|v| v * 0.5), dir.path().join("ball.obj")).unwrap();

    let text = stdout(&cli(&["eval", "cube.obj", "cube.obj", "--points", "256"], dir.path()));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    let surface_error: f64 = fields[5].parse().unwrap();
    assert_eq!(surface_error, 0.0);

    let other = stdout(&cli(&["eval", "ball.obj", "cube.obj", "--points", "256"], dir.path()));
    let cd: f64 = other.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert!(cd > 1e-3, "{cd}");

    stdout(&cli(&["mesh-sdf", "cube.obj", "cube.tsdf"], dir.path()));
    let samples = read_sdf_dataset(dir.path().join("cube.tsdf")).unwrap();
    let defaults = tactile_sdf::pipeline::SdfDataConfig::default();
    assert_eq!(samples.len(), 2 * defaults.n_surface + defaults.n_uniform);
}
