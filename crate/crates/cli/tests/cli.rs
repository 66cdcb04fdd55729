use std::path::Path;
use std::process::{Command, Output};

use sdgl::data::{parse_cell_csv, synthetic_clean_capacity, SyntheticSpec};
use sdgl::emf::{emf_eval, EmfParams};

fn sdgl(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sdgl"));
    cmd.args(args).env_remove("SDGL_OUTPUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("SDGL_OUTPUT_DIR", dir);
    }
    cmd.output().expect("spawn sdgl")
}

const ALL_METHODS: &str = "sdgl, gpr_white, dgpr_index, lstm_only, sdgl_no_emf";

fn small_config(dir: &Path, methods: &str, extra: &str) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(
        &path,
        format!(
            "synthetic = true\nsynthetic.cycles = 30\nsynthetic.seed = 3\nn_train = 22\nsamples = 8\n\
             methods = {methods}\n{extra}"
        ),
    )
    .unwrap();
    path
}

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn run_writes_every_artifact_under_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), ALL_METHODS, "epochs = 2\noutput_dir = results\n");
    let out = sdgl(&["run", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let root = tmp.path().join("results");
    let cell = root.join("synthetic-3");
    let mut expected = vec![root.join("summary.csv")];
    for name in ["features.csv", "plot.svg", "trend.csv", "model_sdgl.tensors", "model_sdgl_no_emf.tensors"] {
        expected.push(cell.join(name));
    }
    for m in ["sdgl", "gpr_white", "dgpr_index", "lstm_only", "sdgl_no_emf"] {
        expected.push(cell.join(format!("predictions_{m}.csv")));
    }
    expected.sort();
    assert_eq!(files_under(&root), expected);
    for f in &expected {
        assert!(std::fs::metadata(f).unwrap().len() > 0, "{} is empty", f.display());
    }
    // Nothing but the config next to the output directory.
    let siblings: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(siblings.len(), 2);

    let features = std::fs::read_to_string(cell.join("features.csv")).unwrap();
    assert_eq!(features.lines().next(), Some("cycle,f1,f2"));
    assert_eq!(features.lines().count(), 31);
    let svg = std::fs::read_to_string(cell.join("plot.svg")).unwrap();
    assert!(svg.contains("stroke-dasharray") && svg.contains("<polygon"));
}

#[test]
fn rerun_gives_byte_identical_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), ALL_METHODS, "epochs = 2\nseed = 5\n");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(sdgl(&["run", cfg.to_str().unwrap()], Some(&a)).status.code(), Some(0));
    assert_eq!(sdgl(&["run", cfg.to_str().unwrap()], Some(&b)).status.code(), Some(0));
    let sa = std::fs::read(a.join("summary.csv")).unwrap();
    assert_eq!(sa, std::fs::read(b.join("summary.csv")).unwrap());
    assert!(!tmp.path().join("output").exists(), "env override ignored");
}

#[test]
fn n_train_not_below_cycles_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "synthetic = true\nsynthetic.cycles = 30\nn_train = 30\n").unwrap();
    let out = sdgl(&["run", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_train"));
    assert!(!tmp.path().join("output").exists());
}

#[test]
fn missing_config_and_bad_usage_exit_1() {
    assert_eq!(sdgl(&["run", "/definitely/not/here.cfg"], None).status.code(), Some(1));
    assert_eq!(sdgl(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(sdgl(&[], None).status.code(), Some(1));
    assert_eq!(sdgl(&["--help"], None).status.code(), Some(0));
}

#[test]
fn diverging_training_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "sdgl", "epochs = 2\nlr = 1e308\n");
    let out = sdgl(&["run", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_requested_cycles_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    for p in [&a, &b] {
        let out = sdgl(&["synth", "--cycles", "168", "--seed", "7", "--out", p.to_str().unwrap()], None);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(parse_cell_csv(&a).unwrap().len(), 168);
}

#[test]
fn noiseless_synth_capacities_follow_the_trend() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("clean.csv");
    let args = [
        "synth",
        "--cycles",
        "50",
        "--theta1",
        "1.8",
        "--theta2",
        "-0.2",
        "--theta3",
        "0.01",
        "--residual-amplitude",
        "0",
        "--noise-std",
        "0",
        "--out",
        p.to_str().unwrap(),
    ];
    assert_eq!(sdgl(&args, None).status.code(), Some(0));
    let theta = EmfParams::new(1.8, -0.2, 0.01);
    let spec = SyntheticSpec { theta, residual_amplitude: 0.0, noise_std: 0.0, ..Default::default() };
    for c in parse_cell_csv(&p).unwrap() {
        let expect = emf_eval(&theta, c.cycle_index as f64).unwrap();
        assert_eq!(synthetic_clean_capacity(&spec, c.cycle_index), expect);
        assert!((c.capacity - expect).abs() <= 1e-12 * expect.abs(), "cycle {}", c.cycle_index);
    }
}

#[test]
fn synth_rejects_invalid_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("x.csv");
    let out = sdgl(&["synth", "--cycles", "5", "--out", p.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    let out = sdgl(&["synth", "--theta2", "0.1", "--theta3", "0.01", "--out", p.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    let out = sdgl(&["synth", "--noise-std", "-1", "--out", p.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn table_four_cells_two_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let mut summary = String::from("cell,method,seed,mse,r2,coverage\n");
    let mses = [[0.0025, 0.00096, 0.00042, 0.00093], [0.004, 0.003, 0.006, 0.005]];
    for (m, method) in ["sdgl", "gpr_white"].iter().enumerate() {
        for (c, cell) in ["B0005", "B0006", "B0007", "B0018"].iter().enumerate() {
            summary.push_str(&format!("{cell},{method},0,{},{},0.9\n", mses[m][c], 0.99 - 0.01 * c as f64));
        }
    }
    std::fs::create_dir(tmp.path().join("run1")).unwrap();
    std::fs::write(tmp.path().join("run1/summary.csv"), summary).unwrap();
    std::fs::write(tmp.path().join("notes.csv"), "a,b\n1,2\n").unwrap();

    let out = sdgl(&["table", tmp.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(tmp.path().join("table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0].split(',').count(), 1 + 2 * 5);
    assert!(lines[0].ends_with("Avg. mse,Avg. r2"));
    for (m, line) in lines[1..].iter().enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let cells: Vec<f64> = (0..4).map(|c| f[1 + 2 * c].parse().unwrap()).collect();
        let avg: f64 = f[9].parse().unwrap();
        assert!((avg - cells.iter().sum::<f64>() / 4.0).abs() < 1e-12);
        assert!((avg - mses[m].iter().sum::<f64>() / 4.0).abs() < 1e-12);
    }
}

#[test]
fn table_on_empty_directory_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(sdgl(&["table", tmp.path().to_str().unwrap()], None).status.code(), Some(1));
}
