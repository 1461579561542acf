//! Line-delimited JSON with a schema tag on every record.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Serialize)]
struct TaggedRef<'a, T> {
    schema: &'a str,
    #[serde(flatten)]
    record: &'a T,
}

#[derive(Deserialize)]
struct Tagged<T> {
    schema: String,
    #[serde(flatten)]
    record: T,
}

#[derive(Deserialize)]
struct SchemaOnly {
    schema: String,
}

/// Encodes records as JSONL bytes, one tagged object per line.
pub fn to_bytes<T: Serialize>(schema: &str, records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, &TaggedRef { schema, record })?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write<T: Serialize>(path: &Path, schema: &str, records: &[T]) -> Result<()> {
    let bytes = to_bytes(schema, records)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads records, rejecting any line whose schema tag differs from `schema`.
/// Line numbers in errors are 1-based.
pub fn read<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema_err = |reason: String| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let tag: SchemaOnly = serde_json::from_str(&line).map_err(|e| schema_err(e.to_string()))?;
        if tag.schema != schema {
            return Err(Error::SchemaVersion {
                path: path.to_path_buf(),
                expected: schema.to_string(),
                found: tag.schema,
            });
        }
        let tagged: Tagged<T> = serde_json::from_str(&line).map_err(|e| schema_err(e.to_string()))?;
        debug_assert_eq!(tagged.schema, schema);
        out.push(tagged.record);
    }
    Ok(out)
}
