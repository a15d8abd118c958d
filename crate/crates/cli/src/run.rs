//! Orchestrates one run and writes its artifacts.

use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;
use thiserror::Error;
use winfty_core::descent::{cascade, CascadeOutcome, DescentError, LevelSummary, ShapeStats};
use winfty_core::mesh::{read_mesh, write_mesh_to, MeshError, ReferenceMesh};
use winfty_core::metrics::ConvergenceTable;
use winfty_core::problem::experiment;

use crate::config::{MeshSource, Mode, RunConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("output directory {path} is not writable: {source}")]
    OutputDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot build the initial mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Descent(#[from] DescentError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub const HISTORY_HEADER: [&str; 11] =
    ["level", "step", "h", "t_k", "energy", "pairing", "dual_norm", "hcd", "dphi_norm", "dphi_inv_norm", "volume"];

/// Everything a run produced.
#[derive(Debug)]
pub struct RunOutput {
    pub outcome: CascadeOutcome,
    pub files: Vec<PathBuf>,
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for row in rows {
        w.write_record(&row).expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// `history.csv`: one row per accepted step.
pub fn history_csv(outcome: &CascadeOutcome) -> Vec<u8> {
    csv_bytes(
        &HISTORY_HEADER,
        outcome.history.steps.iter().map(|s| {
            vec![
                s.level.to_string(),
                s.step.to_string(),
                num(s.h),
                num(s.t_k),
                num(s.energy),
                num(s.pairing),
                num(s.dual_norm),
                num(s.hcd),
                num(s.dphi_norm),
                num(s.dphi_inv_norm),
                num(s.volume),
            ]
        }),
    )
}

/// `levels.csv`: the carried shape at the start of each level and the shape
/// reported at its end, so refinement jumps are visible.
pub fn levels_csv(levels: &[LevelSummary]) -> Vec<u8> {
    let header = [
        "level", "phase", "h", "mu", "energy", "objective", "hcd", "dphi_norm", "dphi_inv_norm", "volume", "steps",
        "k_star", "stop",
    ];
    let row = |l: &LevelSummary, phase: &str, s: &ShapeStats| {
        vec![
            l.level.to_string(),
            phase.to_string(),
            num(l.h),
            opt(l.mu),
            num(s.energy),
            num(s.objective),
            num(s.hcd),
            num(s.dphi_norm),
            num(s.dphi_inv_norm),
            num(s.volume),
            l.steps.to_string(),
            l.k_star.to_string(),
            format!("{:?}", l.stop),
        ]
    };
    csv_bytes(&header, levels.iter().flat_map(|l| [row(l, "start", &l.start), row(l, "end", &l.end)]))
}

/// `table.csv`: energy and HCD per level with their EOCs.
pub fn table_csv(table: &ConvergenceTable) -> Vec<u8> {
    csv_bytes(
        &["h", "mu", "energy", "eoc_energy", "hcd", "eoc_hcd"],
        table.rows.iter().map(|r| vec![num(r.h), opt(r.mu), num(r.energy), opt(r.eoc_energy), num(r.hcd), opt(r.eoc_hcd)]),
    )
}

fn check_writable(dir: &Path) -> Result<(), RunError> {
    let fail = |source| RunError::OutputDir { path: dir.to_path_buf(), source };
    std::fs::create_dir_all(dir).map_err(fail)?;
    NamedTempFile::new_in(dir).map_err(fail)?;
    Ok(())
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, RunError> {
    let path = dir.join(name);
    let fail = |source| RunError::Write { path: path.clone(), source };
    let mut tmp = NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(&path).map_err(|e| fail(e.error))?;
    Ok(path)
}

fn initial_mesh(config: &RunConfig) -> Result<ReferenceMesh, RunError> {
    let exp = experiment(config.experiment);
    Ok(match &config.mesh {
        MeshSource::File(path) => read_mesh(path)?,
        MeshSource::Generated { n: Some(n) } => exp.initial_mesh.with_resolution(*n).build()?,
        MeshSource::Generated { n: None } => exp.initial_mesh.build()?,
    })
}

/// Runs the configured cascade. Nothing is written unless the whole run
/// succeeds; each file is written to a temporary and renamed into place.
pub fn run(config: &RunConfig) -> Result<RunOutput, RunError> {
    check_writable(&config.out)?;
    let exp = experiment(config.experiment);
    let mesh = initial_mesh(config)?;
    log::info!(
        "{} {} mode, {} levels, {} vertices, {} triangles",
        config.experiment,
        config.mode,
        config.levels,
        mesh.num_vertices(),
        mesh.num_triangles()
    );
    let outcome = cascade(&config.descent(), &exp, mesh, |l| {
        log::info!(
            "level {} (h = {}): {} steps, k* = {}, stop {:?}, energy {:.6e} -> {:.6e}, hcd {:.4e}",
            l.level,
            l.h,
            l.steps,
            l.k_star,
            l.stop,
            l.start.energy,
            l.end.energy,
            l.end.hcd
        );
    })?;

    let mut artifacts = vec![
        ("history.csv".to_string(), history_csv(&outcome)),
        ("levels.csv".to_string(), levels_csv(&outcome.history.levels)),
    ];
    if config.mode == Mode::Converge {
        artifacts.push(("table.csv".to_string(), table_csv(&outcome.table)));
    }
    for (k, level) in outcome.levels.iter().enumerate() {
        let mut bytes = Vec::new();
        write_mesh_to(&mut bytes, &level.mesh, Some(&level.phi)).expect("writing to memory");
        artifacts.push((format!("mesh_level{k}.txt"), bytes));
    }
    let files = artifacts
        .iter()
        .map(|(name, bytes)| write_atomic(&config.out, name, bytes))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunOutput { outcome, files })
}
