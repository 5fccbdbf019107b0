use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gi_helmholtz::greens::{build_kernel, SelfTermMode};
use gi_helmholtz::grid::{ComplexField, Grid2D};
use gi_helmholtz::io::{read_field, write_field, FieldFile};
use gi_helmholtz::Complex64;
use serde_json::{json, Value};
use tempfile::TempDir;

fn gihelm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gihelm"))
        .args(args)
        .output()
        .expect("run gihelm")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn lens_config(n: usize, length: f64, contrast: f64) -> Value {
    let h = length / n as f64;
    json!({
        "medium": {
            "type": "synthetic",
            "grid": {"nz": n, "nx": n, "dz": h, "dx": h},
            "v0": 2.0,
            "frequency_hz": 10.0,
            "model": {"kind": "gaussian_lens", "contrast": contrast,
                      "center_z": length / 2.0, "center_x": length / 2.0, "sigma": 0.06}
        },
        "source": {"z": h / 2.0, "x": length / 2.0 + h / 2.0}
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run_cmd(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    gihelm(&args)
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::Digest;
    sha2::Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn trace_residuals(out: &Path) -> Vec<f64> {
    let text = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = text.split("\r\n").filter(|l| !l.is_empty());
    assert_eq!(lines.next(), Some("step,residual_norm,elapsed_ms"));
    lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

#[test]
fn homogeneous_solve_writes_zero_field() {
    let dir = TempDir::new().unwrap();
    let mut cfg = lens_config(12, 0.3, 0.0);
    cfg["medium"]["model"] = json!({"kind": "homogeneous"});
    cfg["solver"] = json!({"method": "direct"});
    let c = write_config(dir.path(), "c.json", &cfg);
    let out = dir.path().join("out");
    let o = run_cmd("solve", &c, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let f = read_field(&out.join("solution.gihf")).unwrap();
    assert!(f.values().iter().all(|v| v.norm() == 0.0));

    let m = manifest(&out);
    let files: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["file"].as_str().unwrap())
        .collect();
    for f in ["config.json", "solution.gihf", "trace.csv"] {
        assert!(files.contains(&f), "{files:?}");
    }
    for e in m["outputs"].as_array().unwrap() {
        let bytes = std::fs::read(out.join(e["file"].as_str().unwrap())).unwrap();
        assert_eq!(e["sha256"].as_str().unwrap(), sha256_hex(&bytes));
    }
    assert_eq!(m["status"], "converged");
}

#[test]
fn born_weak_lens_converges() {
    let dir = TempDir::new().unwrap();
    let mut cfg = lens_config(24, 0.3, -0.2);
    cfg["solver"] = json!({"method": "born", "max_iters": 200, "tol": 1e-10});
    let c = write_config(dir.path(), "c.json", &cfg);
    let out = dir.path().join("out");
    let o = run_cmd("solve", &c, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = trace_residuals(&out);
    assert!(r.last().unwrap() <= &(1e-10 * r[0]));
}

#[test]
fn born_strong_lens_diverges() {
    let dir = TempDir::new().unwrap();
    let mut cfg = lens_config(24, 0.3, -0.45);
    cfg["solver"] = json!({"method": "born", "max_iters": 400});
    let c = write_config(dir.path(), "c.json", &cfg);
    let out = dir.path().join("out");
    let o = run_cmd("solve", &c, &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let r = trace_residuals(&out);
    assert!(r.last().unwrap() > &(1e6 * r[0]));
    assert_eq!(manifest(&out)["status"], "diverged");
}

#[test]
fn landweber_strong_lens_converges() {
    let dir = TempDir::new().unwrap();
    let mut cfg = lens_config(24, 0.3, -0.45);
    cfg["solver"] = json!({"method": "landweber", "max_iters": 5000, "tol": 1e-10});
    let c = write_config(dir.path(), "c.json", &cfg);
    let out = dir.path().join("out");
    let o = run_cmd("solve", &c, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = trace_residuals(&out);
    assert!(r.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = TempDir::new().unwrap();
    let mut cfg = lens_config(8, 0.2, 0.1);
    cfg["solver"] = json!({"method": "born", "max_iter": 10});
    let c = write_config(dir.path(), "c.json", &cfg);
    let o = run_cmd("solve", &c, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("max_iter") && e.contains("line"), "{e}");
}

#[test]
fn missing_velocity_file_names_the_path() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "medium": {"type": "file", "path": "no_such_model.bin"},
        "source": {"z": 0.01, "x": 0.01},
        "train": {"epochs": 1}
    });
    let c = write_config(dir.path(), "c.json", &cfg);
    let o = run_cmd("train", &c, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_model.bin"), "{}", stderr(&o));
}

fn train_config(mode: &str, lambda_max: f64) -> Value {
    let mut cfg = lens_config(12, 0.3, 0.15);
    cfg["train"] = json!({
        "mode": mode,
        "epochs": 40,
        "seed": 3,
        "lambda_max": lambda_max,
        "eval_every": 10,
        "architecture": {"bands": 3, "width": 16, "hidden_layers": 2},
        "pool": {"n_pool": 128, "n_raw": 512, "n_x": 32}
    });
    cfg["reference"] = json!({"type": "direct"});
    cfg
}

#[test]
fn hybrid_without_pde_weight_matches_gi_outputs() {
    let dir = TempDir::new().unwrap();
    let a = write_config(dir.path(), "gi.json", &train_config("gi", 0.0));
    let b = write_config(dir.path(), "hy.json", &train_config("hybrid", 0.0));
    let (oa, ob) = (dir.path().join("gi"), dir.path().join("hy"));
    assert_eq!(run_cmd("train", &a, &oa, &[]).status.code(), Some(0));
    assert_eq!(run_cmd("train", &b, &ob, &[]).status.code(), Some(0));
    for f in ["nmse.csv", "loss.csv", "checkpoint.ginn", "prediction.gihf"] {
        assert_eq!(
            std::fs::read(oa.join(f)).unwrap(),
            std::fs::read(ob.join(f)).unwrap(),
            "{f}"
        );
    }
    let nmse = std::fs::read_to_string(oa.join("nmse.csv")).unwrap();
    assert!(nmse.starts_with("epoch,nmse,mae\r\n"));
    assert_eq!(nmse.lines().count(), 1 + 5);
}

#[test]
fn equal_seeds_reproduce_and_overrides_apply() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), "c.json", &train_config("hybrid", 0.01));
    let (o1, o2, o3) = (dir.path().join("1"), dir.path().join("2"), dir.path().join("3"));
    assert_eq!(run_cmd("train", &c, &o1, &[]).status.code(), Some(0));
    assert_eq!(run_cmd("train", &c, &o2, &[]).status.code(), Some(0));
    let sums = |o: &Path| -> Vec<Value> { manifest(o)["outputs"].as_array().unwrap().clone() };
    assert_eq!(sums(&o1), sums(&o2));
    assert_eq!(manifest(&o1)["input_sha256"], manifest(&o2)["input_sha256"]);

    let o = run_cmd("train", &c, &o3, &["--seed-override", "4", "--epochs-override", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(&o3);
    assert_eq!(m["seed"], 4);
    assert_eq!(m["config"]["train"]["epochs"], 7);
    let losses = std::fs::read_to_string(o3.join("loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 1 + 7);
}

#[test]
fn non_finite_loss_exits_3_with_diagnostic() {
    let dir = TempDir::new().unwrap();
    let mut cfg = train_config("gi", 0.0);
    cfg["train"]["output_gain"] = json!(1e300);
    let c = write_config(dir.path(), "c.json", &cfg);
    let out = dir.path().join("out");
    let o = run_cmd("train", &c, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(out.join("diagnostic.ginn").exists());
    assert_eq!(manifest(&out)["status"], "non_finite");
}

#[test]
fn kernel_and_pool_dumps() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), "c.json", &train_config("hybrid", 0.01));
    let out = dir.path().join("out");
    assert_eq!(run_cmd("kernel-dump", &c, &out, &[]).status.code(), Some(0));
    let k = FieldFile::from_bytes(&std::fs::read(out.join("kernel.gihf")).unwrap()).unwrap();
    assert_eq!((k.grid.nz, k.grid.nx), (24, 24));

    let o = run_cmd("pool-dump", &c, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let pool = std::fs::read_to_string(out.join("pool.csv")).unwrap();
    assert!(pool.starts_with("z,x,delta_m,u0_re,u0_im\r\n"));
    assert_eq!(pool.lines().count(), 1 + 128);
}

#[test]
fn render_zero_field_and_determinism() {
    let dir = TempDir::new().unwrap();
    let grid = Grid2D::new(5, 7, 0.1, 0.1, 0.0, 0.0).unwrap();
    let fpath = dir.path().join("z.gihf");
    write_field(&fpath, &ComplexField::zeros(grid)).unwrap();
    let (p1, p2) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
    for p in [&p1, &p2] {
        let o = gihelm(&[
            "render",
            "--field",
            fpath.to_str().unwrap(),
            "--out",
            p.to_str().unwrap(),
            "--part",
            "re",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (a, b) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(a, b);
    let header = b"P5\n7 5\n255\n";
    assert!(a.starts_with(header));
    assert!(a[header.len()..].iter().all(|&p| p == 128));

    let png = dir.path().join("a.png");
    let o = gihelm(&[
        "render",
        "--field",
        fpath.to_str().unwrap(),
        "--out",
        png.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(&std::fs::read(&png).unwrap()[1..4], b"PNG");
}

#[test]
fn render_rejects_corrupt_magic() {
    let dir = TempDir::new().unwrap();
    let fpath = dir.path().join("bad.gihf");
    let mut bytes =
        FieldFile::from_field(&ComplexField::zeros(Grid2D::new(2, 2, 1.0, 1.0, 0.0, 0.0).unwrap())).to_bytes();
    bytes[..4].copy_from_slice(b"NOPE");
    std::fs::write(&fpath, bytes).unwrap();
    let o = gihelm(&[
        "render",
        "--field",
        fpath.to_str().unwrap(),
        "--out",
        dir.path().join("x.pgm").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));
}

#[test]
fn render_impulse_response_is_mirror_symmetric() {
    let dir = TempDir::new().unwrap();
    let n = 15;
    let grid = Grid2D::new(n, n, 0.01, 0.01, 0.0, 0.0).unwrap();
    let kernel = build_kernel(&grid, 31.4, SelfTermMode::CellAveraged).unwrap();
    let mut src = vec![Complex64::new(0.0, 0.0); n * n];
    src[grid.index(n / 2, n / 2)] = Complex64::new(1.0, 0.0);
    let field = ComplexField::new(grid, kernel.convolve(&src)).unwrap();
    let fpath = dir.path().join("imp.gihf");
    write_field(&fpath, &field).unwrap();
    let img = dir.path().join("imp.pgm");
    let o = gihelm(&[
        "render",
        "--field",
        fpath.to_str().unwrap(),
        "--out",
        img.to_str().unwrap(),
        "--part",
        "abs",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let bytes = std::fs::read(&img).unwrap();
    let px = &bytes[bytes.len() - n * n..];
    let at = |iz: usize, ix: usize| px[iz * n + ix] as i32;
    for iz in 0..n {
        for ix in 0..n {
            assert!((at(iz, ix) - at(n - 1 - iz, ix)).abs() <= 1);
            assert!((at(iz, ix) - at(iz, n - 1 - ix)).abs() <= 1);
            assert!((at(iz, ix) - at(ix, iz)).abs() <= 1);
        }
    }
}
