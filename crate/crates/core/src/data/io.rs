//! Dataset files: a header line `{"num_classes": C, "class_names": [...]}`
//! followed by one JSON record per line, UTF-8 with LF endings.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, ImageRecord};
use crate::error::{FddmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

pub fn write_dataset<W: Write>(manifest: &DatasetManifest, mut out: W) -> std::io::Result<()> {
    let header = DatasetHeader {
        num_classes: manifest.num_classes,
        class_names: manifest.class_names.clone(),
        provenance: manifest.provenance.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in &manifest.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_dataset<R: Read>(input: R) -> Result<DatasetManifest> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines().enumerate();
    let header: DatasetHeader = match lines.next() {
        None => return Err(FddmError::EmptyManifest),
        Some((_, line)) => {
            let line = line.map_err(|e| FddmError::Parse {
                line: 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                return Err(FddmError::EmptyManifest);
            }
            serde_json::from_str(&line).map_err(|e| FddmError::Parse {
                line: 1,
                message: format!("bad header: {e}"),
            })?
        }
    };
    if header.class_names.len() != header.num_classes {
        return Err(FddmError::Schema {
            line: 1,
            message: format!(
                "{} class names for {} classes",
                header.class_names.len(),
                header.num_classes
            ),
        });
    }

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| FddmError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.is_empty() {
            continue;
        }
        let record: ImageRecord = serde_json::from_str(&line).map_err(|e| FddmError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.labels.len() != header.num_classes {
            return Err(FddmError::Schema {
                line: line_no,
                message: format!(
                    "record `{}` has {} labels, header declares {} classes",
                    record.record_id,
                    record.labels.len(),
                    header.num_classes
                ),
            });
        }
        records.push(record);
    }
    DatasetManifest::new(
        records,
        header.num_classes,
        header.class_names,
        header.provenance,
    )
}

pub fn save_dataset(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| FddmError::io(path, e))?;
    write_dataset(manifest, BufWriter::new(file)).map_err(|e| FddmError::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| FddmError::io(path, e))?;
    read_dataset(file)
}
