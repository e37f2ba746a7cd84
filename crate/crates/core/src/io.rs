//! File formats: matrix CSV, cohort manifest JSON and site-effect JSON.
//!
//! * Matrix: `N` lines of `N` comma-separated base-10 integers, no header.
//! * Manifest: `{"n_nodes", "seed", "sites": [...], "subjects": [{"id",
//!   "site_index", "matrix_path", "group_key", "split", "latent_path"?}]}`.
//!   Paths are resolved relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{CohortManifest, Split, SubjectRecord};
use crate::error::{Error, Result};
use crate::matrix::{validate_matrix, ConnectivityMatrix};
use crate::site::{self, SiteDescriptor};

pub fn load_matrix(path: impl AsRef<Path>) -> Result<ConnectivityMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, path)
}

fn parse_matrix(text: &str, path: &Path) -> Result<ConnectivityMatrix> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let n = rows.len();
    let mut values = Vec::with_capacity(n * n);
    for (i, line) in rows.iter().enumerate() {
        let tokens: Vec<&str> = line.split(',').map(str::trim).collect();
        if tokens.len() != n {
            return Err(parse_err(
                i + 1,
                format!("expected {n} columns for a {n}-row matrix, found {}", tokens.len()),
            ));
        }
        for (j, tok) in tokens.iter().enumerate() {
            let v = match tok.parse::<i64>() {
                Ok(v) => v as f64,
                Err(_) => match tok.parse::<f64>() {
                    Ok(v) if v.is_finite() && v.fract() == 0.0 => v,
                    Ok(_) => return Err(Error::NonIntegerEntry { row: i, col: j }),
                    Err(_) => return Err(parse_err(i + 1, format!("invalid integer token '{tok}'"))),
                },
            };
            values.push(v);
        }
    }
    validate_matrix(n, &values)?;
    ConnectivityMatrix::new(n, values)
}

pub fn format_matrix(m: &ConnectivityMatrix) -> String {
    let n = m.n();
    let mut out = String::with_capacity(n * n * 3);
    for i in 0..n {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&(*v as u64).to_string());
        }
        out.push('\n');
    }
    out
}

pub fn save_matrix(m: &ConnectivityMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, format_matrix(m)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFile {
    n_nodes: usize,
    seed: u64,
    sites: Vec<SiteDescriptor>,
    subjects: Vec<SubjectEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SubjectEntry {
    id: String,
    site_index: usize,
    matrix_path: String,
    #[serde(default)]
    group_key: Option<String>,
    #[serde(default)]
    split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latent_path: Option<String>,
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a manifest and every matrix it references.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<CohortManifest> {
    let path = path.as_ref();
    let file: ManifestFile = read_json(path)?;
    let base = base_dir(path);
    let mut latents: BTreeMap<String, ConnectivityMatrix> = BTreeMap::new();
    let mut subjects = Vec::with_capacity(file.subjects.len());
    let mut split_labels = BTreeMap::new();
    for entry in &file.subjects {
        let site = *site::find_site(&file.sites, entry.site_index)?;
        let matrix = load_matrix(base.join(&entry.matrix_path))?;
        let latent_truth = match &entry.latent_path {
            Some(p) => {
                if !latents.contains_key(p) {
                    latents.insert(p.clone(), load_matrix(base.join(p))?);
                }
                Some(latents[p].clone())
            }
            None => None,
        };
        if let Some(split) = entry.split {
            split_labels.insert(entry.id.clone(), split);
        }
        subjects.push(SubjectRecord {
            subject_id: entry.id.clone(),
            site,
            matrix,
            group_key: entry.group_key.clone(),
            latent_truth,
        });
    }
    let manifest = CohortManifest {
        n_nodes: file.n_nodes,
        seed: file.seed,
        sites: file.sites,
        subjects,
        split_labels,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Writes every matrix under `dir/matrices` (and latents under `dir/latent`)
/// then the manifest JSON at `dir/file_name`. Returns the manifest path.
pub fn write_manifest(manifest: &CohortManifest, dir: impl AsRef<Path>, file_name: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = Path::new(file_name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("manifest")
        .to_string();
    let mut entries = Vec::with_capacity(manifest.subjects.len());
    let mut written_latents: BTreeMap<String, String> = BTreeMap::new();
    for rec in &manifest.subjects {
        let rel = format!("{stem}_matrices/{}_site{}.csv", rec.subject_id, rec.site.site_index);
        save_matrix(&rec.matrix, dir.join(&rel))?;
        let latent_path = match &rec.latent_truth {
            Some(latent) => {
                if let Some(p) = written_latents.get(&rec.subject_id) {
                    Some(p.clone())
                } else {
                    let p = format!("{stem}_latent/{}.csv", rec.subject_id);
                    save_matrix(latent, dir.join(&p))?;
                    written_latents.insert(rec.subject_id.clone(), p.clone());
                    Some(p)
                }
            }
            None => None,
        };
        entries.push(SubjectEntry {
            id: rec.subject_id.clone(),
            site_index: rec.site.site_index,
            matrix_path: rel,
            group_key: rec.group_key.clone(),
            split: manifest.split_of(&rec.subject_id),
            latent_path,
        });
    }
    let file = ManifestFile {
        n_nodes: manifest.n_nodes,
        seed: manifest.seed,
        sites: manifest.sites.clone(),
        subjects: entries,
    };
    let path = dir.join(file_name);
    write_json(&file, &path)?;
    Ok(path)
}

/// Writes CSV rows through a buffered writer; `rows` are pre-formatted lines.
pub fn write_lines(path: impl AsRef<Path>, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for row in rows {
        writeln!(w, "{row}").map_err(io)?;
    }
    w.flush().map_err(io)
}
