//! N-best lists as JSON Lines, one utterance per line.

use crate::combine::NBestList;
use crate::error::{Error, Result};

pub fn read_nbest_jsonl(text: &str) -> Result<Vec<NBestList>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let list: NBestList = serde_json::from_str(line)
            .map_err(|e| Error::format("NBEST", format!("line {}: {e}", i + 1)))?;
        list.validate()
            .map_err(|e| Error::format("NBEST", format!("line {}: {e}", i + 1)))?;
        out.push(list);
    }
    Ok(out)
}

pub fn write_nbest_jsonl(lists: &[NBestList]) -> Result<String> {
    let mut out = String::new();
    for l in lists {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    Ok(out)
}
