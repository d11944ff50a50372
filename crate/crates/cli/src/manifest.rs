//! Dataset manifest: CSV with header `pair_id,path_a,path_b,path_ref,task`.
//! Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use aefuse::image::load_pgm;
use aefuse::{ImagePair, TaskKind};
use thiserror::Error;

pub const HEADER: [&str; 5] = ["pair_id", "path_a", "path_b", "path_ref", "task"];

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {0}: {1}")]
    Read(String, String),
    #[error("manifest header must be '{}'", HEADER.join(","))]
    BadHeader,
    #[error("manifest row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("manifest lists no pairs")]
    Empty,
    #[error("duplicate pair_id '{0}'")]
    DuplicatePair(String),
    #[error("pair '{pair}': {reason}")]
    Input { pair: String, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub pair_id: String,
    pub path_a: PathBuf,
    pub path_b: PathBuf,
    pub path_ref: Option<PathBuf>,
    pub task: TaskKind,
}

impl ManifestRow {
    /// Loads and validates the images of this row.
    pub fn load(&self) -> Result<ImagePair, ManifestError> {
        let input = |reason: String| ManifestError::Input {
            pair: self.pair_id.clone(),
            reason,
        };
        let read = |p: &Path| load_pgm(p).map_err(|e| input(e.to_string()));
        let pair = ImagePair::new(
            &self.pair_id,
            read(&self.path_a)?,
            read(&self.path_b)?,
            self.task,
        )
        .map_err(|e| input(e.to_string()))?;
        match &self.path_ref {
            Some(r) => pair
                .with_reference(read(r)?)
                .map_err(|e| input(e.to_string())),
            None => Ok(pair),
        }
    }
}

/// Parses manifest text; `base` resolves relative paths.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRow>, ManifestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|_| ManifestError::BadHeader)?;
    if header.iter().ne(HEADER) {
        return Err(ManifestError::BadHeader);
    }
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| ManifestError::BadRow {
            row,
            reason: e.to_string(),
        })?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let pair_id = field(0).to_string();
        aefuse::oracle::validate_pair_id(&pair_id).map_err(|e| ManifestError::BadRow {
            row,
            reason: e.to_string(),
        })?;
        if !seen.insert(pair_id.clone()) {
            return Err(ManifestError::DuplicatePair(pair_id));
        }
        if field(1).is_empty() || field(2).is_empty() {
            return Err(ManifestError::BadRow {
                row,
                reason: format!("pair '{pair_id}' needs path_a and path_b"),
            });
        }
        let task = field(4)
            .parse::<TaskKind>()
            .map_err(|reason| ManifestError::BadRow { row, reason })?;
        rows.push(ManifestRow {
            path_a: resolve(field(1)),
            path_b: resolve(field(2)),
            path_ref: (!field(3).is_empty()).then(|| resolve(field(3))),
            task,
            pair_id,
        });
    }
    if rows.is_empty() {
        return Err(ManifestError::Empty);
    }
    Ok(rows)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRow>, ManifestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ManifestError::Read(path.display().to_string(), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)
}

/// Manifest text for `rows`, with paths written as given.
pub fn render_manifest(rows: &[ManifestRow]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for r in rows {
        let path = |p: &Path| p.to_string_lossy().into_owned();
        w.write_record([
            r.pair_id.clone(),
            path(&r.path_a),
            path(&r.path_b),
            r.path_ref.as_deref().map(path).unwrap_or_default(),
            r.task.as_str().to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 paths")
}
