//! Tab-separated tables with a header row whose first column is `utt_id`.
//! Transcripts add a `text` column; other columns are free metadata.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn utt_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r[0].as_str())
    }
}

pub fn read_tsv(text: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .from_reader(text.as_bytes());
    let columns: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::format("TSV", e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if columns.first().map(String::as_str) != Some("utt_id") {
        return Err(Error::format("TSV", "first header column must be `utt_id`"));
    }
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("TSV", format!("row {}: {e}", i + 2)))?;
        let row: Vec<String> = rec.iter().map(String::from).collect();
        if !seen.insert(row[0].clone()) {
            return Err(Error::format("TSV", format!("row {}: duplicate utt_id `{}`", i + 2, row[0])));
        }
        rows.push(row);
    }
    Ok(Table { columns, rows })
}

pub fn write_tsv(table: &Table) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(Vec::new());
    let io = |e: csv::Error| Error::format("TSV", e.to_string());
    w.write_record(&table.columns).map_err(io)?;
    for r in &table.rows {
        if r.iter().any(|c| c.contains(['\t', '\n'])) {
            return Err(Error::format("TSV", format!("`{}`: fields may not contain tabs or newlines", r[0])));
        }
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("TSV", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::format("TSV", e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptRow {
    pub utt_id: String,
    pub text: String,
    pub metadata: BTreeMap<String, String>,
}

pub fn read_transcripts(text: &str) -> Result<Vec<TranscriptRow>> {
    let table = read_tsv(text)?;
    let ti = table
        .column("text")
        .ok_or_else(|| Error::format("TSV", "transcripts need a `text` column"))?;
    Ok(table
        .rows
        .iter()
        .map(|r| TranscriptRow {
            utt_id: r[0].clone(),
            text: r[ti].clone(),
            metadata: table
                .columns
                .iter()
                .zip(r)
                .enumerate()
                .filter(|(i, _)| *i != 0 && *i != ti)
                .map(|(_, (c, v))| (c.clone(), v.clone()))
                .collect(),
        })
        .collect())
}

/// Metadata columns are the sorted union of all keys; absent values are
/// written empty.
pub fn write_transcripts(rows: &[TranscriptRow]) -> Result<String> {
    let keys: BTreeSet<&String> = rows.iter().flat_map(|r| r.metadata.keys()).collect();
    let mut columns = vec!["utt_id".to_string(), "text".to_string()];
    columns.extend(keys.iter().map(|k| k.to_string()));
    let rows = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.utt_id.clone(), r.text.clone()];
            row.extend(keys.iter().map(|k| r.metadata.get(*k).cloned().unwrap_or_default()));
            row
        })
        .collect();
    write_tsv(&Table { columns, rows })
}
