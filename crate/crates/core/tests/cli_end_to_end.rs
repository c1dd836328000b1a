//! Drives the command-line entry point in-process against a temporary output directory.

use std::fs;
use std::path::Path;

use chkp_hdg::cli::main_with_args;

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("chkp-hdg").chain(args.iter().copied()))
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn study_writes_one_row_per_level_with_decreasing_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let code = run(&["study", "--scenario", "mms", "--k", "1", "--dt", "1e-2", "--t-final", "0.1", "--levels", "2..16", "--output", out]);
    assert_eq!(code, 0);
    let rows = csv_rows(&dir.path().join("errors_mms_k1.csv"));
    assert_eq!(rows.len(), 4);
    let ns: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(ns, ["2", "4", "8", "16"]);
    let err_u: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(err_u.windows(2).all(|w| w[1] < w[0]), "{err_u:?}");
    // No order on the first row.
    assert!(rows[0][5].is_empty() || rows[0][5] == "NaN" || rows[0][5] == "-", "{:?}", rows[0]);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let code = run(&["run", "--scenario", "mms", "--k", "2", "--N", "4", "--dt", "1e-2", "--t-final", "0.05", "--cadence", "1", "--output", d.path().to_str().unwrap()]);
        assert_eq!(code, 0);
    }
    for name in ["diagnostics.csv", "errors.csv"] {
        let (x, y) = (fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs between runs");
    }
}

#[test]
fn energy_command_reports_nonincreasing_energy() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&["energy", "--k", "1", "--N", "4", "--dt", "1e-2", "--t-final", "0.1", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let rows = csv_rows(&dir.path().join("diagnostics.csv"));
    assert_eq!(rows.len(), 11);
    let e: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{e:?}");
}

#[test]
fn peakon_writes_a_section_per_time_and_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&[
        "peakon", "--k", "1", "--N", "4", "--dt", "0.05", "--t-final", "0.1", "--times", "0,0.1", "--sections", "x=0,y=0.5",
        "--samples", "21", "--surface", "5", "--output", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let mut names: Vec<String> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let sections = names.iter().filter(|n| n.starts_with("section_")).count();
    let surfaces = names.iter().filter(|n| n.starts_with("surface_")).count();
    assert_eq!((sections, surfaces), (4, 2), "{names:?}");
    for n in names.iter().filter(|n| n.starts_with("section_")) {
        assert_eq!(csv_rows(&dir.path().join(n)).len(), 21);
    }
}

#[test]
fn bad_input_maps_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["run", "--scenario", "nonsense", "--output", out]), 2);
    assert_eq!(run(&["run", "--k", "0", "--output", out]), 2);
    assert_eq!(run(&["run", "--dt", "-1", "--output", out]), 2);
    assert_eq!(run(&["study", "--levels", "3..5", "--output", out]), 2);

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "scenario = \"mms\"\nunknown_key = 1\n").unwrap();
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap(), "--output", out]), 2);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "scenario = \"mms\"\nk = 1\nn = 8\ndt = 0.05\nt_final = 0.1\ncadence = 1\n[stabilization]\ntau_f = \"adaptive\"\n").unwrap();
    let out = dir.path().join("out");
    let code = run(&["run", "--config", cfg.to_str().unwrap(), "--N", "2", "--output", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let rows = csv_rows(&out.join("errors.csv"));
    assert_eq!(rows[0][..2], ["1".to_owned(), "2".to_owned()]);
    assert_eq!(csv_rows(&out.join("diagnostics.csv")).len(), 3);
}
