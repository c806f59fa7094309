//! Artifact writers. Every file is written to a temporary sibling and
//! renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use pneutop::{IterationRecord, MeshGrid};

use crate::error::{CliError, CliResult};

pub const HISTORY_HEADER: &str = "iteration,f0_eroded,f0_intermediate,f0_dilated,\
mse_intermediate_mn,se_intermediate_j,volume_eroded,volume_intermediate,volume_dilated,\
dilated_target,mnd_intermediate_pct,beta,max_change";

pub const DESIGN_HEADER: &str = "element,rho,rho_filtered,rho_projected";

/// Tracks which artifacts have been written so far.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Lists what made it to disk before a failure.
    pub fn write_manifest(&self, reason: &str) -> CliResult<PathBuf> {
        let mut text = format!("# run aborted: {reason}\n");
        for p in &self.written {
            let _ = writeln!(text, "{}", p.display());
        }
        let path = self.dir.join("partial_manifest.txt");
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

pub fn history_csv(records: &[IterationRecord]) -> String {
    let mut s = String::with_capacity(256 * (records.len() + 1));
    s.push_str(HISTORY_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.f0[0],
            r.f0[1],
            r.f0[2],
            r.mse_intermediate,
            r.se_intermediate,
            r.volume[0],
            r.volume[1],
            r.volume[2],
            r.dilated_target,
            r.discreteness_intermediate,
            r.beta,
            r.max_change
        );
    }
    s
}

pub fn timing_csv(records: &[IterationRecord]) -> String {
    let mut s = String::from("iteration,wall_ms\n");
    for r in records {
        let _ = writeln!(s, "{},{:.3}", r.iteration, r.wall_ms);
    }
    s
}

pub fn diagnostics_csv(records: &[IterationRecord]) -> String {
    let mut s = String::from("iteration,reciprocity_error,pressure_min,pressure_max\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.iteration, r.reciprocity_error, r.pressure_min, r.pressure_max
        );
    }
    s
}

/// One realization of the design on its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignTable {
    pub nex: usize,
    pub ney: usize,
    pub lx: f64,
    pub ly: f64,
    pub rho: Vec<f64>,
    pub filtered: Vec<f64>,
    pub projected: Vec<f64>,
}

pub fn design_csv(t: &DesignTable) -> String {
    let mut s = String::with_capacity(64 * t.rho.len());
    let _ = writeln!(s, "# nex={} ney={} lx_m={} ly_m={}", t.nex, t.ney, t.lx, t.ly);
    s.push_str(DESIGN_HEADER);
    s.push('\n');
    for e in 0..t.rho.len() {
        let _ = writeln!(s, "{},{},{},{}", e, t.rho[e], t.filtered[e], t.projected[e]);
    }
    s
}

pub fn read_design_csv(path: &Path) -> CliResult<DesignTable> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_design_csv(&text)
        .map_err(|m| CliError::Validation(format!("{}: {m}", path.display())))
}

pub fn parse_design_csv(text: &str) -> Result<DesignTable, String> {
    let mut lines = text.lines();
    let grid = lines.next().ok_or("empty file")?;
    let grid = grid.strip_prefix('#').ok_or("missing `# nex=.. ney=..` grid line")?;
    let (mut nex, mut ney, mut lx, mut ly) = (None, None, None, None);
    for item in grid.split_whitespace() {
        let (k, v) = item.split_once('=').ok_or_else(|| format!("bad grid item `{item}`"))?;
        match k {
            "nex" => nex = v.parse::<usize>().ok(),
            "ney" => ney = v.parse::<usize>().ok(),
            "lx_m" => lx = v.parse::<f64>().ok(),
            "ly_m" => ly = v.parse::<f64>().ok(),
            _ => return Err(format!("unknown grid item `{k}`")),
        }
    }
    let (Some(nex), Some(ney), Some(lx), Some(ly)) = (nex, ney, lx, ly) else {
        return Err("grid line needs nex, ney, lx_m and ly_m".into());
    };
    if lines.next() != Some(DESIGN_HEADER) {
        return Err(format!("expected header `{DESIGN_HEADER}`"));
    }
    let n = nex * ney;
    let mut t = DesignTable {
        nex,
        ney,
        lx,
        ly,
        rho: Vec::with_capacity(n),
        filtered: Vec::with_capacity(n),
        projected: Vec::with_capacity(n),
    };
    for (row, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(format!("row {row}: expected 4 columns"));
        }
        if cols[0].parse::<usize>() != Ok(row) {
            return Err(format!("row {row}: element index out of order"));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("row {row}: bad number `{s}`"))
        };
        t.rho.push(num(cols[1])?);
        t.filtered.push(num(cols[2])?);
        t.projected.push(num(cols[3])?);
    }
    if t.rho.len() != n {
        return Err(format!("expected {n} rows, found {}", t.rho.len()));
    }
    Ok(t)
}

/// 8-bit gray level of a density: solid black, void white.
pub fn gray_level(rho: f64) -> u8 {
    (255.0 * (1.0 - rho.clamp(0.0, 1.0))).round() as u8
}

/// Binary PGM (P5), one pixel per element, top row first.
pub fn pgm(nex: usize, ney: usize, field: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{nex} {ney}\n255\n").into_bytes();
    out.reserve(nex * ney);
    for j in (0..ney).rev() {
        out.extend((0..nex).map(|i| gray_level(field[j * nex + i])));
    }
    out
}

/// Decodes a P5 image written by [`pgm`] into `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err("not a P5 image".into());
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field `{s}`"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(format!("maxval {maxval}, expected 255"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(format!("{} pixels, expected {}", data.len(), w * h));
    }
    Ok((w, h, data.to_vec()))
}

fn vtk_grid(mesh: &MeshGrid, title: &str) -> String {
    let (nx, ny) = (mesh.nex + 1, mesh.ney + 1);
    let mut s = String::with_capacity(64 * nx * ny);
    let _ = writeln!(s, "# vtk DataFile Version 2.0");
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET STRUCTURED_GRID");
    let _ = writeln!(s, "DIMENSIONS {nx} {ny} 1");
    let _ = writeln!(s, "POINTS {} double", nx * ny);
    for n in 0..mesh.n_nodes() {
        let (x, y) = mesh.node_coords(n);
        let _ = writeln!(s, "{x} {y} 0");
    }
    let _ = writeln!(s, "POINT_DATA {}", nx * ny);
    s
}

/// Nodal pressure in Pa as a legacy structured-grid file.
pub fn pressure_vtk(mesh: &MeshGrid, p: &[f64]) -> String {
    let mut s = vtk_grid(mesh, "pressure of the intermediate design [Pa]");
    s.push_str("SCALARS pressure double 1\nLOOKUP_TABLE default\n");
    for v in p {
        let _ = writeln!(s, "{v}");
    }
    s
}

/// Nodal displacement in m as a legacy structured-grid file.
pub fn displacement_vtk(mesh: &MeshGrid, u: &[f64]) -> String {
    let mut s = vtk_grid(mesh, "displacement of the intermediate design [m]");
    s.push_str("VECTORS displacement double\n");
    for n in 0..mesh.n_nodes() {
        let _ = writeln!(s, "{} {} 0", u[2 * n], u[2 * n + 1]);
    }
    s
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub iterations: usize,
    pub early_exit: bool,
    pub beta: f64,
    pub scale: f64,
    pub drainage_solid: f64,
    pub dilated_target: f64,
    pub objective: f64,
    /// Signed y-displacements of the output node in m, eroded/intermediate/dilated.
    pub delta: [f64; 3],
    pub volume: [f64; 3],
    pub discreteness: [f64; 3],
}

pub fn summary_text(s: &Summary) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "delta_mm = {}", s.delta[1] * 1e3);
    let _ = writeln!(
        t,
        "delta_mm_eroded_intermediate_dilated = {} {} {}",
        s.delta[0] * 1e3,
        s.delta[1] * 1e3,
        s.delta[2] * 1e3
    );
    let _ = writeln!(
        t,
        "volume_fraction_eroded_intermediate_dilated = {} {} {}",
        s.volume[0], s.volume[1], s.volume[2]
    );
    let _ = writeln!(
        t,
        "mnd_pct_eroded_intermediate_dilated = {} {} {}",
        s.discreteness[0], s.discreteness[1], s.discreteness[2]
    );
    let _ = writeln!(t, "objective_worst = {}", s.objective);
    let _ = writeln!(t, "objective_scale = {}", s.scale);
    let _ = writeln!(t, "dilated_target = {}", s.dilated_target);
    let _ = writeln!(t, "drainage_solid = {}", s.drainage_solid);
    let _ = writeln!(t, "final_beta = {}", s.beta);
    let _ = writeln!(t, "iterations = {}", s.iterations);
    let _ = writeln!(t, "early_exit = {}", s.early_exit);
    t
}

/// Reads `key = value` lines back from a summary file.
pub fn parse_summary(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_orientation() {
        // 2 x 2 grid; element 2 sits in the top-left.
        let img = pgm(2, 2, &[0.0, 0.0, 1.0, 0.5]);
        let (w, h, px) = parse_pgm(&img).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(px, vec![0, 128, 255, 255]);
    }

    #[test]
    fn gray_levels() {
        assert_eq!(gray_level(1.0), 0);
        assert_eq!(gray_level(0.0), 255);
        assert_eq!(gray_level(1.5), 0);
    }

    #[test]
    fn vtk_counts() {
        let mesh = MeshGrid::new(2.0, 1.0, 2, 1, 1.0);
        let text = pressure_vtk(&mesh, &[0.0; 6]);
        assert!(text.contains("DIMENSIONS 3 2 1"));
        assert!(text.contains("POINTS 6 double"));
        assert!(text.contains("POINT_DATA 6"));
        // 6 header lines, points, POINT_DATA, SCALARS + LOOKUP_TABLE, values.
        assert_eq!(text.lines().count(), 6 + 6 + 1 + 2 + 6);
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
