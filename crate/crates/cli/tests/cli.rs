use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use pneutop::model::FixedHalf;
use pneutop::sensitivity::{discreteness, volume_fraction, Fault};
use pneutop::RunConfig;
use pneutop_cli::commands::OptimizeOutcome;
use pneutop_cli::config::{parse_pressure, render_config, REQUIRED};
use pneutop_cli::output::{gray_level, parse_design_csv, parse_pgm, parse_summary, HISTORY_HEADER};
use pneutop_cli::{cmd_check_gradients, cmd_extract_contour, cmd_optimize, parse_config, parse_config_str, CliError};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn tiny() -> RunConfig {
    let mut c = parse_config(&configs().join("paper_fig3.cfg")).unwrap();
    c.domain.nex = 12;
    c.domain.ney = 18;
    c.domain.lx = 0.012;
    c.domain.ly = 0.018;
    c.schedule.max_iters = 8;
    c.schedule.beta_period = 3;
    c.schedule.volume_update_period = 4;
    c.output_dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli/tiny").display().to_string();
    c
}

fn tiny_run() -> &'static OptimizeOutcome {
    static RUN: OnceLock<OptimizeOutcome> = OnceLock::new();
    RUN.get_or_init(|| {
        let c = tiny();
        let _ = std::fs::remove_dir_all(&c.output_dir);
        cmd_optimize(&c, false).unwrap()
    })
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn member_config_resolves_to_the_published_parameters() {
    let c = parse_config(&configs().join("paper_fig3.cfg")).unwrap();
    assert_eq!((c.domain.nex, c.domain.ney), (100, 150));
    assert_eq!((c.domain.lx, c.domain.ly), (0.1, 0.15));
    assert_eq!(c.pressure, 1e5);
    assert_eq!(c.delta_eta, 0.15);
    assert_eq!(c.filter_radius_factor, 6.0);
    assert!((c.filter_radius() - 6.0 * 0.001).abs() < 1e-15);
    assert_eq!(c.material.chi, 3.0);
    assert_eq!(c.flow.contrast, 1e-7);
    assert_eq!(c.regions.kss, 1e4);
    assert_eq!(c.material.e1, 100e6);
    assert_eq!(c.material.nu, 0.4);
    assert_eq!((c.flow.eta_k, c.flow.beta_k), (0.2, 10.0));
    assert_eq!((c.flow.eta_d, c.flow.beta_d), (0.3, 10.0));
    assert_eq!(c.volume_target, 0.2);
    assert_eq!(c.schedule.max_iters, 400);
    assert_eq!(c.schedule.early_exit_tol, None);
    assert_eq!(c.regions.fixed_half, FixedHalf::Upper);
}

#[test]
fn empty_config_names_every_required_key() {
    let msg = parse_config_str("").unwrap_err().to_string();
    for k in REQUIRED {
        assert!(msg.contains(k), "{k} missing from: {msg}");
    }
}

#[test]
fn bad_configs_are_validation_errors() {
    let base = render_config(&RunConfig::default());
    let unknown = format!("{base}mesh.nz = 3\n");
    let e = parse_config_str(&unknown).unwrap_err();
    assert!(e.to_string().contains("mesh.nz"));
    assert_eq!(e.exit_code(), 1);
    let unitless = base.replace("load.pressure = 100000 Pa", "load.pressure = 100000");
    assert!(parse_config_str(&unitless).is_err());
    let negative = base.replace("volume.target = 0.2", "volume.target = -0.2");
    assert_eq!(parse_config_str(&negative).unwrap_err().exit_code(), 1);
    assert_eq!(parse_pressure("1 bar").unwrap(), 1e5);
}

#[test]
fn missing_config_file_is_an_io_error() {
    let e = parse_config(Path::new("/nonexistent/run.cfg")).unwrap_err();
    assert!(matches!(e, CliError::Io { .. }));
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn rendered_config_reads_back_identically() {
    let mut c = tiny();
    c.schedule.early_exit_tol = Some(1e-3);
    c.regions.fixed_half = FixedHalf::Lower;
    c.pressure = 12345.678;
    assert_eq!(parse_config_str(&render_config(&c)).unwrap(), c);
}

#[test]
fn optimize_writes_every_artifact() {
    let out = tiny_run();
    for name in [
        "resolved_config.txt",
        "history.csv",
        "timing.csv",
        "diagnostics.csv",
        "design_eroded.csv",
        "design_intermediate.csv",
        "design_dilated.csv",
        "design_eroded.pgm",
        "design_intermediate.pgm",
        "design_dilated.pgm",
        "pressure_intermediate.vtk",
        "displacement_intermediate.vtk",
        "summary.txt",
    ] {
        assert!(out.dir.join(name).is_file(), "{name}");
    }
    assert!(!out.dir.join("partial_manifest.txt").exists());
    let resolved = parse_config_str(&read(&out.dir, "resolved_config.txt")).unwrap();
    assert_eq!(resolved, tiny());
}

#[test]
fn history_has_one_finite_row_per_iteration() {
    let out = tiny_run();
    let text = read(&out.dir, "history.csv");
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HISTORY_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    let width = HISTORY_HEADER.split(',').count();
    for (k, row) in rows.iter().enumerate() {
        let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), width);
        assert_eq!(cols[0], k as f64);
        assert!(cols.iter().all(|v| v.is_finite()), "row {k}: {row}");
    }
}

#[test]
fn design_files_reproduce_the_reported_metrics() {
    let out = tiny_run();
    let summary = parse_summary(&read(&out.dir, "summary.txt"));
    let get = |k: &str| -> Vec<f64> {
        let v = &summary.iter().find(|(key, _)| key == k).unwrap().1;
        v.split_whitespace().map(|x| x.parse().unwrap()).collect()
    };
    let vols = get("volume_fraction_eroded_intermediate_dilated");
    let mnds = get("mnd_pct_eroded_intermediate_dilated");
    for (m, name) in ["eroded", "intermediate", "dilated"].iter().enumerate() {
        let t = parse_design_csv(&read(&out.dir, &format!("design_{name}.csv"))).unwrap();
        assert_eq!((t.nex, t.ney), (12, 18));
        assert!((volume_fraction(&t.projected) - vols[m]).abs() <= 1e-12);
        assert!((discreteness(&t.projected) - mnds[m]).abs() <= 1e-12);
        let expected = out.result.final_evaluation.design.triplet.fields[m].clone();
        assert_eq!(t.projected, expected);
        assert_eq!(t.rho, out.result.rho);

        let bytes = std::fs::read(out.dir.join(format!("design_{name}.pgm"))).unwrap();
        let (w, h, px) = parse_pgm(&bytes).unwrap();
        assert_eq!((w, h, px.len()), (12, 18, 12 * 18));
        for j in 0..18 {
            for i in 0..12 {
                // Image row 0 is the top of the domain.
                assert_eq!(px[(17 - j) * 12 + i], gray_level(t.projected[j * 12 + i]));
            }
        }
    }
    let delta = get("delta_mm")[0];
    assert_eq!(delta, out.result.output_dy() * 1e3);
}

#[test]
fn vtk_files_are_structured_grids_over_the_nodes() {
    let out = tiny_run();
    for name in ["pressure_intermediate.vtk", "displacement_intermediate.vtk"] {
        let text = read(&out.dir, name);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 2.0");
        assert_eq!(lines[2], "ASCII");
        assert_eq!(lines[3], "DATASET STRUCTURED_GRID");
        assert_eq!(lines[4], "DIMENSIONS 13 19 1");
        assert!(text.contains("POINT_DATA 247"));
        // header + points + POINT_DATA + data header(s) + values
        let extra = if name.starts_with("pressure") { 2 } else { 1 };
        assert_eq!(lines.len(), 6 + 247 + 1 + extra + 247);
    }
}

#[test]
fn all_passive_domain_is_refused_before_the_loop() {
    let mut c = tiny();
    c.regions.void_center = (0.5, 0.5);
    c.regions.void_size = (1.0, 1.0);
    c.output_dir = scratch("all_passive").display().to_string();
    let e = cmd_optimize(&c, false).unwrap_err();
    assert_eq!(e.exit_code(), 1, "{e}");
    assert!(!Path::new(&c.output_dir).join("history.csv").exists());
}

#[test]
fn gradient_check_refuses_large_meshes() {
    let mut c = parse_config(&configs().join("paper_fig3.cfg")).unwrap();
    c.output_dir = scratch("guard").display().to_string();
    let e = cmd_check_gradients(&c, 42, 2.0, None).unwrap_err();
    assert_eq!(e.exit_code(), 1);
    assert!(e.to_string().contains("6"), "{e}");
}

#[test]
fn gradient_check_catches_a_sign_fault() {
    let mut c = parse_config(&configs().join("gradient_check_6x9.cfg")).unwrap();
    c.output_dir = scratch("fault").display().to_string();
    let report = cmd_check_gradients(&c, 42, 2.0, Some(Fault::FlowCoefficient)).unwrap();
    assert!(!report.passed);
    assert!(report.max_error > 1e-2);
    let table = std::fs::read_to_string(&report.table).unwrap();
    let active = pneutop::model::build_model(&c).unwrap().n_active();
    assert_eq!(table.lines().count(), 1 + 3 * 3 * active);
}

#[test]
fn contour_of_the_tiny_design() {
    let out = tiny_run();
    let design = out.dir.join("design_intermediate.csv");
    let prefix = scratch("contour").join("member");
    // Eight iterations leave the design gray; cut at mid-range.
    let t = parse_design_csv(&read(&out.dir, "design_intermediate.csv")).unwrap();
    let (lo, hi) = t.projected.iter().fold((1.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let level = 0.5 * (lo + hi);
    let a = cmd_extract_contour(&design, level, Some(&prefix)).unwrap();
    assert!(a.loops >= 1);
    let svg = std::fs::read_to_string(&a.svg).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("width=\"12mm\""));
    let first = std::fs::read(&a.csv).unwrap();
    cmd_extract_contour(&design, level, Some(&prefix)).unwrap();
    assert_eq!(first, std::fs::read(&a.csv).unwrap());
}

#[test]
fn contour_of_a_uniform_design_is_refused() {
    let dir = scratch("uniform");
    std::fs::create_dir_all(&dir).unwrap();
    let mut text = String::from("# nex=2 ney=2 lx_m=0.002 ly_m=0.002\nelement,rho,rho_filtered,rho_projected\n");
    for e in 0..4 {
        text.push_str(&format!("{e},0.8,0.8,0.8\n"));
    }
    let path = dir.join("uniform.csv");
    std::fs::write(&path, text).unwrap();
    let e = cmd_extract_contour(&path, 0.5, None).unwrap_err();
    assert_eq!(e.exit_code(), 1);
    assert!(e.to_string().contains("empty contour"));
}

fn pneutop(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_pneutop")).args(args).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

#[test]
fn binary_exit_codes() {
    let dir = scratch("exit_codes");
    std::fs::create_dir_all(&dir).unwrap();
    let empty = dir.join("empty.cfg");
    std::fs::write(&empty, "").unwrap();
    let (code, text) = pneutop(&["optimize", empty.to_str().unwrap()]);
    assert_eq!(code, 1, "{text}");
    assert!(text.contains("mma.max_iters"));

    let (code, _) = pneutop(&["optimize", "/nonexistent/run.cfg"]);
    assert_eq!(code, 3);

    let cfg = configs().join("gradient_check_6x9.cfg");
    let mut c = parse_config(&cfg).unwrap();
    c.output_dir = dir.join("faulty").display().to_string();
    let faulty = dir.join("faulty.cfg");
    std::fs::write(&faulty, render_config(&c)).unwrap();
    let (code, text) = pneutop(&["check-gradients", faulty.to_str().unwrap(), "--inject-fault", "stiffness"]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("FAIL"));
}
