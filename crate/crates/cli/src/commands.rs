use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pneutop::model::build_model;
use pneutop::optimizer::{certify_gradients, random_design, run, GradientCertificate, GRADIENT_TOLERANCE};
use pneutop::sensitivity::{Evaluator, Fault};
use pneutop::{IterationRecord, OptimizationResult, ProblemModel, Realization, RunConfig};

use crate::config::render_config;
use crate::contour::{contour_csv, contour_svg, extract};
use crate::error::{CliError, CliResult};
use crate::output::{
    design_csv, diagnostics_csv, displacement_vtk, history_csv, pgm, pressure_vtk, read_design_csv,
    summary_text, timing_csv, Artifacts, DesignTable, Summary,
};

/// Seed of the design used by the pre-run gradient certificate.
pub const CERTIFICATE_SEED: u64 = 42;

/// Largest mesh edge count accepted by the gradient check.
pub const CHECK_MAX_ELEMENTS: usize = 12;

/// Central-difference step of the gradient check.
pub const CHECK_STEP: f64 = 1e-6;

#[derive(Debug)]
pub struct OptimizeOutcome {
    pub dir: PathBuf,
    pub model: ProblemModel,
    pub certificate: GradientCertificate,
    pub result: OptimizationResult,
}

pub fn cmd_optimize(config: &RunConfig, progress: bool) -> CliResult<OptimizeOutcome> {
    let model = build_model(config)?;
    let dir = PathBuf::from(&config.output_dir);
    let mut art = Artifacts::new(&dir)?;
    art.write("resolved_config.txt", render_config(config).as_bytes())?;

    let certificate = certify_gradients(config, CERTIFICATE_SEED)?;
    if progress {
        eprintln!("gradient self-check passed: max relative error {:.3e}", certificate.max_error);
    }

    let mut seen: Vec<IterationRecord> = Vec::new();
    let outcome = run(&model, certificate, |r| {
        if progress && (r.iteration % 10 == 0 || r.iteration + 1 == config.schedule.max_iters) {
            eprintln!(
                "iter {:4}  f0 {:+.5} {:+.5} {:+.5}  V {:.4} {:.4} {:.4}  Mnd {:5.2}%  beta {}  change {:.4}",
                r.iteration,
                r.f0[0],
                r.f0[1],
                r.f0[2],
                r.volume[0],
                r.volume[1],
                r.volume[2],
                r.discreteness_intermediate,
                r.beta,
                r.max_change
            );
        }
        seen.push(r.clone());
    });
    let result = match outcome {
        Ok(r) => r,
        Err(e) => {
            let reason = e.to_string();
            let _ = art.write("history.csv", history_csv(&seen).as_bytes());
            let _ = art.write("timing.csv", timing_csv(&seen).as_bytes());
            let _ = art.write_manifest(&reason);
            return Err(e.into());
        }
    };

    if let Err(e) = write_run_artifacts(&mut art, &model, &result) {
        let _ = art.write_manifest(&e.to_string());
        return Err(e);
    }
    Ok(OptimizeOutcome {
        dir,
        model,
        certificate,
        result,
    })
}

pub fn design_table(model: &ProblemModel, result: &OptimizationResult, r: Realization) -> DesignTable {
    let design = &result.final_evaluation.design;
    DesignTable {
        nex: model.mesh.nex,
        ney: model.mesh.ney,
        lx: model.mesh.lx,
        ly: model.mesh.ly,
        rho: design.rho.clone(),
        filtered: design.filtered.clone(),
        projected: design.triplet.get(r).to_vec(),
    }
}

pub fn summary(model: &ProblemModel, result: &OptimizationResult) -> Summary {
    let ev = &result.final_evaluation;
    Summary {
        iterations: result.records.len(),
        early_exit: result.early_exit,
        beta: ev.design.triplet.beta,
        scale: result.scale,
        drainage_solid: model.config.drainage_solid(),
        dilated_target: result.dilated_target,
        objective: result.final_objective(),
        delta: [0, 1, 2].map(|m| ev.states[m].output_dy),
        volume: ev.volumes(),
        discreteness: ev.discreteness(),
    }
}

fn write_run_artifacts(art: &mut Artifacts, model: &ProblemModel, result: &OptimizationResult) -> CliResult<()> {
    art.write("history.csv", history_csv(&result.records).as_bytes())?;
    art.write("timing.csv", timing_csv(&result.records).as_bytes())?;
    art.write("diagnostics.csv", diagnostics_csv(&result.records).as_bytes())?;
    for r in Realization::ALL {
        let table = design_table(model, result, r);
        art.write(&format!("design_{}.csv", r.name()), design_csv(&table).as_bytes())?;
        art.write(
            &format!("design_{}.pgm", r.name()),
            &pgm(table.nex, table.ney, &table.projected),
        )?;
    }
    let inter = result.final_evaluation.state(Realization::Intermediate);
    art.write("pressure_intermediate.vtk", pressure_vtk(&model.mesh, &inter.pressure).as_bytes())?;
    art.write("displacement_intermediate.vtk", displacement_vtk(&model.mesh, &inter.u).as_bytes())?;
    art.write("summary.txt", summary_text(&summary(model, result)).as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    /// `(seed, max relative error)` per random design.
    pub seeds: Vec<(u64, f64)>,
    pub max_error: f64,
    pub passed: bool,
    pub table: PathBuf,
}

/// Adjoint against central differences at three random designs drawn from
/// `seed`, `seed + 1` and `seed + 2`.
pub fn cmd_check_gradients(
    config: &RunConfig,
    seed: u64,
    beta: f64,
    fault: Option<Fault>,
) -> CliResult<GradientReport> {
    let (nex, ney) = (config.domain.nex, config.domain.ney);
    if nex > CHECK_MAX_ELEMENTS || ney > CHECK_MAX_ELEMENTS {
        return Err(CliError::Validation(format!(
            "check-gradients runs one pair of full solves per element and is limited to \
             {CHECK_MAX_ELEMENTS} x {CHECK_MAX_ELEMENTS} elements; the config asks for {nex} x {ney}. \
             Use a reduced copy of the config (for example mesh.nex = 6, mesh.ney = 9)."
        )));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(CliError::Validation(format!("--beta must be positive, got {beta}")));
    }
    let model = build_model(config)?;
    let mut ev = Evaluator::new(&model)?;
    ev.fault = fault;

    let mut table = String::from("seed,element,realization,adjoint,finite_difference,relative_error\n");
    let mut seeds = Vec::new();
    for s in seed..seed + 3 {
        let rho = random_design(&model, s);
        let check = ev.check_gradients(&rho, beta, CHECK_STEP)?;
        for (i, e) in check.entries.iter().enumerate() {
            let _ = writeln!(
                table,
                "{s},{},{},{},{},{}",
                e.element,
                e.realization.name(),
                e.adjoint,
                e.finite_difference,
                check.entry_error(i)
            );
        }
        seeds.push((s, check.max_relative_error()));
    }
    let max_error = seeds.iter().map(|s| s.1).fold(0.0, f64::max);
    let mut art = Artifacts::new(Path::new(&config.output_dir))?;
    let table = art.write("gradient_check.csv", table.as_bytes())?;
    Ok(GradientReport {
        seeds,
        max_error,
        passed: max_error <= GRADIENT_TOLERANCE,
        table,
    })
}

#[derive(Debug, Clone)]
pub struct ContourOutcome {
    pub loops: usize,
    pub svg: PathBuf,
    pub csv: PathBuf,
}

/// Writes `<prefix>.svg` and `<prefix>.csv`; the prefix defaults to the
/// design file path with `_contour` appended to its stem.
pub fn cmd_extract_contour(design: &Path, level: f64, prefix: Option<&Path>) -> CliResult<ContourOutcome> {
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::Validation(format!("--level must lie in (0, 1), got {level}")));
    }
    let t = read_design_csv(design)?;
    let contour = extract(t.nex, t.ney, t.lx, t.ly, &t.projected, level).ok_or_else(|| {
        CliError::Validation(format!(
            "{}: empty contour, the field lies entirely on one side of {level}",
            design.display()
        ))
    })?;
    let prefix = match prefix {
        Some(p) => p.to_path_buf(),
        None => {
            let stem = design.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            design.with_file_name(format!("{stem}_contour"))
        }
    };
    let dir = prefix.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = prefix.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut art = Artifacts::new(dir)?;
    let svg = art.write(&format!("{name}.svg"), contour_svg(&contour, t.lx, t.ly).as_bytes())?;
    let csv = art.write(&format!("{name}.csv"), contour_csv(&contour).as_bytes())?;
    Ok(ContourOutcome {
        loops: contour.loops.len(),
        svg,
        csv,
    })
}
