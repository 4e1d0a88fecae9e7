//! CSV input and output for blocked files.
//!
//! Layout: `record_id, block_id`, then the block-level columns and the
//! record-level columns in schema order, then any extra (analysis) columns.
//! Block-level values must be constant within a block id.

use std::collections::HashMap;
use std::path::Path;

use crate::comparison::{Block, BlockedFile, Record, Schema, Value};
use crate::error::{LinkError, Result};

/// Extra columns carried alongside the linkage attributes, indexed
/// `[block][record][column]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExtraColumns {
    pub names: Vec<String>,
    pub values: Vec<Vec<Vec<String>>>,
}

impl ExtraColumns {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, s: usize, i: usize, col: usize) -> &str {
        &self.values[s][i][col]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub file: BlockedFile,
    pub extras: ExtraColumns,
}

/// Reads a blocked CSV file, validating it against `schema`.
pub fn read_blocked_csv(path: &Path, file_id: &str, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let (p, k) = (schema.block.len(), schema.record.len());
    if header.len() < 2 + p + k {
        return Err(LinkError::Schema(format!(
            "{}: {} columns, schema needs at least {}",
            path.display(),
            header.len(),
            2 + p + k
        )));
    }
    let expected = schema.block.iter().chain(&schema.record).map(|s| s.name.as_str());
    for (col, name) in header[2..2 + p + k].iter().zip(expected) {
        if col != name {
            return Err(LinkError::Schema(format!(
                "{}: column '{col}' found where schema expects '{name}'",
                path.display()
            )));
        }
    }
    let extra_names = header[2 + p + k..].to_vec();

    let mut blocks: Vec<Block> = Vec::new();
    let mut extras: Vec<Vec<Vec<String>>> = Vec::new();
    let mut raw_block_values: Vec<Vec<String>> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let field = |c: usize| row.get(c).unwrap_or("");
        let block_id = field(1).to_owned();
        let raw_block: Vec<String> = (2..2 + p).map(|c| field(c).trim().to_owned()).collect();
        let s = match index.get(&block_id) {
            Some(&s) => {
                if raw_block_values[s] != raw_block {
                    return Err(LinkError::Schema(format!(
                        "{}: row {} has block-level values {raw_block:?} differing from block '{block_id}'",
                        path.display(),
                        line + 2
                    )));
                }
                s
            }
            None => {
                let values = schema
                    .block
                    .iter()
                    .zip(&raw_block)
                    .map(|(spec, v)| Value::parse(v, &spec.kind))
                    .collect::<Result<Vec<_>>>()?;
                index.insert(block_id.clone(), blocks.len());
                raw_block_values.push(raw_block);
                blocks.push(Block {
                    id: block_id,
                    values,
                    records: Vec::new(),
                });
                extras.push(Vec::new());
                blocks.len() - 1
            }
        };
        let values = schema
            .record
            .iter()
            .enumerate()
            .map(|(m, spec)| Value::parse(field(2 + p + m), &spec.kind))
            .collect::<Result<Vec<_>>>()?;
        blocks[s].records.push(Record {
            id: field(0).to_owned(),
            values,
        });
        extras[s].push((2 + p + k..header.len()).map(|c| field(c).to_owned()).collect());
    }
    let file = BlockedFile {
        id: file_id.to_owned(),
        blocks,
    };
    file.validate(schema)?;
    Ok(Dataset {
        file,
        extras: ExtraColumns {
            names: extra_names,
            values: extras,
        },
    })
}

/// Writes a dataset in the layout read by [`read_blocked_csv`].
pub fn write_blocked_csv(path: &Path, data: &Dataset, schema: &Schema) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["record_id".to_owned(), "block_id".to_owned()];
    header.extend(schema.block.iter().chain(&schema.record).map(|s| s.name.clone()));
    header.extend(data.extras.names.iter().cloned());
    writer.write_record(&header)?;
    for (s, block) in data.file.blocks.iter().enumerate() {
        for (i, rec) in block.records.iter().enumerate() {
            let mut row = vec![rec.id.clone(), block.id.clone()];
            row.extend(block.values.iter().chain(&rec.values).map(Value::to_string));
            if let Some(extra) = data.extras.values.get(s).and_then(|b| b.get(i)) {
                row.extend(extra.iter().cloned());
            }
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparison::{ComparisonKind, ComparisonSpec};

    fn schema() -> Schema {
        Schema {
            block: vec![ComparisonSpec::new("income", ComparisonKind::NumericAbsolute { threshold: 500.0 })],
            record: vec![ComparisonSpec::new("dob", ComparisonKind::OrdinalMultilevel { levels: 3 })],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(
            &path,
            "record_id,block_id,income,dob,severity\nr1,A,50000.5,1980-05,1\nr2,A,50000.5,1981-*,0\nr3,B,42000,,1\n",
        )
        .unwrap();
        let data = read_blocked_csv(&path, "f", &schema()).unwrap();
        assert_eq!(data.file.blocks.len(), 2);
        assert_eq!(data.file.blocks[0].records.len(), 2);
        assert_eq!(data.extras.names, vec!["severity"]);
        assert_eq!(data.extras.get(1, 0, 0), "1");
        assert!(data.file.blocks[1].records[0].values[0].is_missing());
        let out = dir.path().join("g.csv");
        write_blocked_csv(&out, &data, &schema()).unwrap();
        assert_eq!(read_blocked_csv(&out, "f", &schema()).unwrap(), data);
    }

    #[test]
    fn inconsistent_block_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "record_id,block_id,income,dob\nr1,A,1,1980-05\nr2,A,2,1980-05\n").unwrap();
        assert!(matches!(read_blocked_csv(&path, "f", &schema()), Err(LinkError::Schema(_))));
    }

    #[test]
    fn wrong_columns_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "record_id,block_id,dob,income\nr1,A,1980-05,1\n").unwrap();
        assert!(matches!(read_blocked_csv(&path, "f", &schema()), Err(LinkError::Schema(_))));
    }
}
