//! File plumbing: staged atomic writes and manifest loading.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use asrfuse_core::formats::tsv::{read_transcripts, read_tsv, Table, TranscriptRow};

use crate::error::{CliError, CliResult, Context};

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::read(path, e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))
}

/// Write-temp-then-rename in the target's directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::write(path, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::write(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::write(path, e))?;
    // temp files are created owner-only; outputs are ordinary files
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(tmp.path(), std::fs::Permissions::from_mode(0o644))
            .map_err(|e| CliError::write(path, e))?;
    }
    tmp.persist(path).map_err(|e| CliError::write(path, e.error))?;
    Ok(())
}

/// Outputs collected while a command runs and written only once it has
/// fully succeeded.
#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.into(), bytes.into()));
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn commit(self) -> CliResult<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len());
        for (path, bytes) in self.files {
            write_atomic(&path, &bytes)?;
            log::debug!("wrote {}", path.display());
            written.push(path);
        }
        Ok(written)
    }
}

/// Utterance ids become file names, so keep them to a safe alphabet.
pub fn check_file_stem(utt_id: &str) -> CliResult<()> {
    let ok = !utt_id.is_empty()
        && utt_id != "."
        && utt_id != ".."
        && utt_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.+@".contains(c));
    if ok {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "utt_id `{utt_id}` cannot be used as a file name (allowed: letters, digits, - _ . + @)"
        )))
    }
}

/// A TSV manifest whose path columns are relative to the manifest's directory.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub path: PathBuf,
    pub table: Table,
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub utt_id: String,
    /// Resolved artifact paths by column.
    pub paths: BTreeMap<String, PathBuf>,
    pub metadata: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let table = read_tsv(&read_text(path)?).ctx(path.display())?;
        Ok(Self { path: path.to_path_buf(), table })
    }

    fn dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new(""))
    }

    pub fn len(&self) -> usize {
        self.table.rows.len()
    }

    /// Entries with `path_columns` resolved and checked for existence; every
    /// other column is metadata.
    pub fn entries(&self, path_columns: &[&str]) -> CliResult<Vec<ManifestEntry>> {
        let mut idx = Vec::new();
        for &c in path_columns {
            let i = self.table.column(c).ok_or_else(|| {
                CliError::validation(format!(
                    "{}: missing column `{c}` (columns: {})",
                    self.path.display(),
                    self.table.columns.join(", ")
                ))
            })?;
            idx.push((c, i));
        }
        let mut out = Vec::with_capacity(self.len());
        for row in &self.table.rows {
            let mut paths = BTreeMap::new();
            for &(c, i) in &idx {
                let p = self.dir().join(&row[i]);
                if !p.is_file() {
                    return Err(CliError::validation(format!(
                        "{}: utterance `{}`: {c} file {} does not exist",
                        self.path.display(),
                        row[0],
                        p.display()
                    )));
                }
                paths.insert(c.to_string(), p);
            }
            let metadata = self
                .table
                .columns
                .iter()
                .zip(row)
                .skip(1)
                .filter(|(c, _)| !path_columns.contains(&c.as_str()))
                .map(|(c, v)| (c.clone(), v.clone()))
                .collect();
            out.push(ManifestEntry { utt_id: row[0].clone(), paths, metadata });
        }
        Ok(out)
    }
}

pub fn load_transcripts(path: &Path) -> CliResult<Vec<TranscriptRow>> {
    read_transcripts(&read_text(path)?).ctx(path.display())
}
