//! File formats: prediction CSVs, embedding CSVs, ensemble manifests and
//! the JSON/CSV report outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use poolcal::metrics::{EmbeddingTable, ReliabilityReport};
use poolcal::{EnsemblePredictions, LabeledPredictions};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Rows of a prediction file must sum to one within this tolerance.
pub const FILE_TOLERANCE: f64 = 1e-6;

/// Rounds to 6 significant digits, the precision of every report number.
pub fn sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, creating parent directories as needed.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn csv_reader(path: &Path) -> CliResult<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_f64(path: &Path, line: u64, field: &str) -> CliResult<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| CliError::at(path, line, format!("cannot parse {field:?} as a number")))?;
    if !v.is_finite() {
        return Err(CliError::at(path, line, format!("non-finite value {field}")));
    }
    Ok(v)
}

/// Reads a `sample_id,label,p_0,...,p_{C-1}` file.
pub fn read_predictions(path: &Path) -> CliResult<LabeledPredictions> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| CliError::at(path, 1, e))?.clone();
    let n_classes = header.len().saturating_sub(2);
    let header_ok = header.get(0) == Some("sample_id")
        && header.get(1) == Some("label")
        && header.iter().skip(2).enumerate().all(|(c, h)| h == format!("p_{c}"));
    if !header_ok || n_classes < 2 {
        return Err(CliError::at(
            path,
            1,
            "header must be sample_id,label,p_0,...,p_{C-1} with at least two classes",
        ));
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut probs = Vec::new();
    let mut row = vec![0.0; n_classes];
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::at(path, line, e)
        })?;
        let line = record_line(&record);
        if record.len() != n_classes + 2 {
            return Err(CliError::at(
                path,
                line,
                format!("expected {} fields, found {}", n_classes + 2, record.len()),
            ));
        }
        let label: usize = record[1]
            .parse()
            .map_err(|_| CliError::at(path, line, format!("bad label {:?}", &record[1])))?;
        if label >= n_classes {
            return Err(CliError::at(path, line, format!("label {label} out of range for {n_classes} classes")));
        }
        for (slot, field) in row.iter_mut().zip(record.iter().skip(2)) {
            *slot = parse_f64(path, line, field)?;
            if *slot < 0.0 {
                return Err(CliError::at(path, line, format!("negative probability {field}")));
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > FILE_TOLERANCE {
            return Err(CliError::at(path, line, format!("probabilities sum to {sum}")));
        }
        ids.push(record[0].to_string());
        labels.push(label);
        probs.extend_from_slice(&row);
    }
    LabeledPredictions::with_tolerance(probs, n_classes, labels, Some(ids), FILE_TOLERANCE)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Prediction file contents; floats use the shortest round-trip form.
pub fn predictions_csv(preds: &LabeledPredictions) -> String {
    let c = preds.n_classes();
    let mut out = String::from("sample_id,label");
    for k in 0..c {
        let _ = write!(out, ",p_{k}");
    }
    out.push('\n');
    for i in 0..preds.len() {
        match preds.sample_ids() {
            Some(ids) => out.push_str(&ids[i]),
            None => {
                let _ = write!(out, "{i}");
            }
        }
        let _ = write!(out, ",{}", preds.labels()[i]);
        for p in preds.row(i) {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
    }
    out
}

pub fn write_predictions(path: &Path, preds: &LabeledPredictions) -> CliResult<()> {
    atomic_write(path, predictions_csv(preds).as_bytes())
}

/// Reads a `sample_id,e_0,...,e_{D-1}` file.
pub fn read_embeddings(path: &Path) -> CliResult<EmbeddingTable> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| CliError::at(path, 1, e))?.clone();
    let dim = header.len().saturating_sub(1);
    if header.get(0) != Some("sample_id") || dim == 0 {
        return Err(CliError::at(path, 1, "header must be sample_id,e_0,...,e_{D-1}"));
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::at(path, line, e)
        })?;
        let line = record_line(&record);
        if record.len() != dim + 1 {
            return Err(CliError::at(path, line, format!("expected {} fields, found {}", dim + 1, record.len())));
        }
        ids.push(record[0].to_string());
        for field in record.iter().skip(1) {
            values.push(parse_f64(path, line, field)?);
        }
    }
    EmbeddingTable::new(values, dim, Some(ids)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn embeddings_csv(ids: &[String], values: &[f64], dim: usize) -> String {
    let mut out = String::from("sample_id");
    for k in 0..dim {
        let _ = write!(out, ",e_{k}");
    }
    out.push('\n');
    for (id, row) in ids.iter().zip(values.chunks_exact(dim)) {
        out.push_str(id);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Val,
    Test,
    Ood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub member_id: String,
    pub role: Role,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
}

/// JSON description of an ensemble's prediction files.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub members: Vec<ManifestEntry>,
    /// Auxiliary files such as true posteriors and embeddings, by name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub artifacts: BTreeMap<String, PathBuf>,
}

/// Ensembles assembled from a manifest, one per role present.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedManifest {
    pub val: Option<EnsemblePredictions>,
    pub test: Option<EnsemblePredictions>,
    pub ood: Option<EnsemblePredictions>,
    pub artifacts: BTreeMap<String, PathBuf>,
}

impl LoadedManifest {
    pub fn require_test(&self, manifest: &Path) -> CliResult<&EnsemblePredictions> {
        self.test
            .as_ref()
            .ok_or_else(|| CliError::Data(format!("{}: no test members", manifest.display())))
    }
}

pub fn read_manifest(path: &Path) -> CliResult<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::at(path, e.line() as u64, e))
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every prediction file listed in the manifest at `path`.
pub fn load_manifest(path: &Path) -> CliResult<LoadedManifest> {
    let manifest = read_manifest(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut by_role: BTreeMap<Role, (Vec<LabeledPredictions>, Vec<String>)> = BTreeMap::new();
    for entry in &manifest.members {
        let preds = read_predictions(&resolve(&base, &entry.path))?;
        let slot = by_role.entry(entry.role).or_default();
        if slot.1.contains(&entry.member_id) {
            return Err(CliError::Data(format!(
                "{}: member {} listed twice for one role",
                path.display(),
                entry.member_id
            )));
        }
        slot.0.push(preds);
        slot.1.push(entry.member_id.clone());
    }
    if by_role.is_empty() {
        return Err(CliError::Data(format!("{}: manifest lists no members", path.display())));
    }
    let mut out = LoadedManifest {
        val: None,
        test: None,
        ood: None,
        artifacts: manifest
            .artifacts
            .iter()
            .map(|(k, v)| (k.clone(), resolve(&base, v)))
            .collect(),
    };
    let mut shape: Option<(usize, Vec<String>)> = None;
    for (role, (members, ids)) in by_role {
        let ensemble = EnsemblePredictions::new(members, ids)
            .map_err(|e| CliError::Data(format!("{}: {role:?} members: {e}", path.display())))?;
        let this = (ensemble.n_classes(), ensemble.member_ids().to_vec());
        match &shape {
            Some(s) if s.0 != this.0 => {
                return Err(CliError::Data(format!(
                    "{}: {role:?} members have {} classes, others {}",
                    path.display(),
                    this.0,
                    s.0
                )))
            }
            Some(s) if s.1 != this.1 => {
                return Err(CliError::Data(format!(
                    "{}: {role:?} member ids differ from the other roles",
                    path.display()
                )))
            }
            Some(_) => {}
            None => shape = Some(this),
        }
        match role {
            Role::Val => out.val = Some(ensemble),
            Role::Test => out.test = Some(ensemble),
            Role::Ood => out.ood = Some(ensemble),
        }
    }
    Ok(out)
}

/// `bin_low,bin_high,count,conf,acc,gap`; empty bins leave the last three blank.
pub fn reliability_csv(report: &ReliabilityReport) -> String {
    let mut out = String::from("bin_low,bin_high,count,conf,acc,gap\n");
    let opt = |v: Option<f64>| v.map(|x| sig6(x).to_string()).unwrap_or_default();
    for b in &report.bins {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            sig6(b.low),
            sig6(b.high),
            b.count,
            opt(b.confidence),
            opt(b.accuracy),
            opt(b.gap)
        );
    }
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}
