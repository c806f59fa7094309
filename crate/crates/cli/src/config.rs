//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Keys outside [`KEYS`] are
//! rejected. Keys in [`REQUIRED`] must be present, the rest fall back to the
//! PneuNet member defaults of [`RunConfig::default`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use pneutop::model::FixedHalf;
use pneutop::RunConfig;

use crate::error::{CliError, CliResult};

pub const KEYS: &[&str] = &[
    "domain.lx_m",
    "domain.ly_m",
    "mesh.nex",
    "mesh.ney",
    "domain.thickness_m",
    "bc.fixed_left_half",
    "chamber.radius_factor",
    "void.center_x_factor",
    "void.center_y_factor",
    "void.width_factor",
    "void.height_factor",
    "load.pressure",
    "spring.kss_n_per_m",
    "material.e1_pa",
    "material.e0_ratio",
    "material.nu",
    "material.chi",
    "flow.kv",
    "flow.contrast",
    "flow.eta_k",
    "flow.beta_k",
    "drain.remainder",
    "drain.depth_elems",
    "drain.eta_d",
    "drain.beta_d",
    "filter.radius_factor",
    "robust.delta_eta",
    "beta.start",
    "beta.max",
    "beta.period",
    "volume.target",
    "volume.update_period",
    "mma.move_limit",
    "mma.max_iters",
    "mma.early_exit_tol",
    "output.dir",
];

/// Keys without a default: the problem geometry, the load and the budget.
pub const REQUIRED: &[&str] = &[
    "domain.lx_m",
    "domain.ly_m",
    "mesh.nex",
    "mesh.ney",
    "domain.thickness_m",
    "load.pressure",
    "volume.target",
    "mma.max_iters",
];

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config_str(&text).map_err(|e| match e {
        CliError::Validation(m) => invalid(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config_str(text: &str) -> CliResult<RunConfig> {
    let entries = read_entries(text)?;

    let missing: Vec<&str> = REQUIRED
        .iter()
        .copied()
        .filter(|k| !entries.contains_key(*k))
        .collect();
    if !missing.is_empty() {
        return Err(invalid(format!("missing required keys: {}", missing.join(", "))));
    }

    let mut c = RunConfig::default();
    for (key, (line, value)) in &entries {
        apply(&mut c, key, value).map_err(|m| invalid(format!("line {line}: {key}: {m}")))?;
    }
    c.validate()?;
    Ok(c)
}

fn read_entries(text: &str) -> CliResult<BTreeMap<String, (usize, String)>> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(invalid(format!("line {line_no}: expected `key = value`")));
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(invalid(format!("line {line_no}: unknown key `{key}`")));
        }
        if value.is_empty() {
            return Err(invalid(format!("line {line_no}: {key}: empty value")));
        }
        if entries
            .insert(key.to_string(), (line_no, value.to_string()))
            .is_some()
        {
            return Err(invalid(format!("line {line_no}: duplicate key `{key}`")));
        }
    }
    Ok(entries)
}

fn real(v: &str) -> Result<f64, String> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("`{v}` is not a finite number")),
    }
}

fn count(v: &str) -> Result<usize, String> {
    v.parse::<usize>()
        .map_err(|_| format!("`{v}` is not a non-negative integer"))
}

/// Pressure with a mandatory unit: `Pa`, `kPa`, `MPa` or `bar`.
pub fn parse_pressure(v: &str) -> Result<f64, String> {
    let split = v
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .ok_or_else(|| format!("`{v}` has no unit (use Pa, kPa, MPa or bar)"))?;
    let (num, unit) = v.split_at(split);
    let factor = match unit.trim() {
        "Pa" => 1.0,
        "kPa" => 1e3,
        "MPa" => 1e6,
        "bar" => 1e5,
        other => return Err(format!("unknown pressure unit `{other}`")),
    };
    Ok(real(num.trim())? * factor)
}

fn apply(c: &mut RunConfig, key: &str, v: &str) -> Result<(), String> {
    match key {
        "domain.lx_m" => c.domain.lx = real(v)?,
        "domain.ly_m" => c.domain.ly = real(v)?,
        "mesh.nex" => c.domain.nex = count(v)?,
        "mesh.ney" => c.domain.ney = count(v)?,
        "domain.thickness_m" => c.domain.thickness = real(v)?,
        "bc.fixed_left_half" => {
            c.regions.fixed_half = match v {
                "upper" => FixedHalf::Upper,
                "lower" => FixedHalf::Lower,
                _ => return Err(format!("`{v}` is not `upper` or `lower`")),
            }
        }
        "chamber.radius_factor" => c.regions.chamber_radius_factor = real(v)?,
        "void.center_x_factor" => c.regions.void_center.0 = real(v)?,
        "void.center_y_factor" => c.regions.void_center.1 = real(v)?,
        "void.width_factor" => c.regions.void_size.0 = real(v)?,
        "void.height_factor" => c.regions.void_size.1 = real(v)?,
        "load.pressure" => c.pressure = parse_pressure(v)?,
        "spring.kss_n_per_m" => c.regions.kss = real(v)?,
        "material.e1_pa" => c.material.e1 = real(v)?,
        "material.e0_ratio" => c.material.e0_ratio = real(v)?,
        "material.nu" => c.material.nu = real(v)?,
        "material.chi" => c.material.chi = real(v)?,
        "flow.kv" => c.flow.kv = real(v)?,
        "flow.contrast" => c.flow.contrast = real(v)?,
        "flow.eta_k" => c.flow.eta_k = real(v)?,
        "flow.beta_k" => c.flow.beta_k = real(v)?,
        "drain.remainder" => c.flow.drain_remainder = real(v)?,
        "drain.depth_elems" => c.flow.drain_depth_elems = real(v)?,
        "drain.eta_d" => c.flow.eta_d = real(v)?,
        "drain.beta_d" => c.flow.beta_d = real(v)?,
        "filter.radius_factor" => c.filter_radius_factor = real(v)?,
        "robust.delta_eta" => c.delta_eta = real(v)?,
        "beta.start" => c.schedule.beta_start = real(v)?,
        "beta.max" => c.schedule.beta_max = real(v)?,
        "beta.period" => c.schedule.beta_period = count(v)?,
        "volume.target" => c.volume_target = real(v)?,
        "volume.update_period" => c.schedule.volume_update_period = count(v)?,
        "mma.move_limit" => c.move_limit = real(v)?,
        "mma.max_iters" => c.schedule.max_iters = count(v)?,
        "mma.early_exit_tol" => {
            c.schedule.early_exit_tol = if v == "off" { None } else { Some(real(v)?) }
        }
        "output.dir" => c.output_dir = v.to_string(),
        _ => unreachable!("key list and setter table out of sync: {key}"),
    }
    Ok(())
}

/// Every key with its effective value, in a form `parse_config_str` reads
/// back to the same configuration.
pub fn render_config(c: &RunConfig) -> String {
    let early = match c.schedule.early_exit_tol {
        Some(t) => t.to_string(),
        None => "off".into(),
    };
    let values: Vec<(&str, String)> = vec![
        ("domain.lx_m", c.domain.lx.to_string()),
        ("domain.ly_m", c.domain.ly.to_string()),
        ("mesh.nex", c.domain.nex.to_string()),
        ("mesh.ney", c.domain.ney.to_string()),
        ("domain.thickness_m", c.domain.thickness.to_string()),
        ("bc.fixed_left_half", c.regions.fixed_half.as_str().into()),
        ("chamber.radius_factor", c.regions.chamber_radius_factor.to_string()),
        ("void.center_x_factor", c.regions.void_center.0.to_string()),
        ("void.center_y_factor", c.regions.void_center.1.to_string()),
        ("void.width_factor", c.regions.void_size.0.to_string()),
        ("void.height_factor", c.regions.void_size.1.to_string()),
        ("load.pressure", format!("{} Pa", c.pressure)),
        ("spring.kss_n_per_m", c.regions.kss.to_string()),
        ("material.e1_pa", c.material.e1.to_string()),
        ("material.e0_ratio", c.material.e0_ratio.to_string()),
        ("material.nu", c.material.nu.to_string()),
        ("material.chi", c.material.chi.to_string()),
        ("flow.kv", c.flow.kv.to_string()),
        ("flow.contrast", c.flow.contrast.to_string()),
        ("flow.eta_k", c.flow.eta_k.to_string()),
        ("flow.beta_k", c.flow.beta_k.to_string()),
        ("drain.remainder", c.flow.drain_remainder.to_string()),
        ("drain.depth_elems", c.flow.drain_depth_elems.to_string()),
        ("drain.eta_d", c.flow.eta_d.to_string()),
        ("drain.beta_d", c.flow.beta_d.to_string()),
        ("filter.radius_factor", c.filter_radius_factor.to_string()),
        ("robust.delta_eta", c.delta_eta.to_string()),
        ("beta.start", c.schedule.beta_start.to_string()),
        ("beta.max", c.schedule.beta_max.to_string()),
        ("beta.period", c.schedule.beta_period.to_string()),
        ("volume.target", c.volume_target.to_string()),
        ("volume.update_period", c.schedule.volume_update_period.to_string()),
        ("mma.move_limit", c.move_limit.to_string()),
        ("mma.max_iters", c.schedule.max_iters.to_string()),
        ("mma.early_exit_tol", early),
        ("output.dir", c.output_dir.clone()),
    ];
    debug_assert_eq!(values.len(), KEYS.len());
    let mut out = String::new();
    for (k, v) in values {
        let _ = writeln!(out, "{k} = {v}");
    }
    let _ = writeln!(out, "# derived: drainage D_s = {}", c.drainage_solid());
    let _ = writeln!(out, "# derived: filter radius = {} m", c.filter_radius());
    out
}
