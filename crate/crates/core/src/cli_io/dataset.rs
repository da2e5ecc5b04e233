//! Labelled message files: CSV with a header naming `label` and `text`
//! columns in either order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::IoError;
use crate::text::Label;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub label: Label,
    pub text: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub counts: [usize; Label::COUNT],
}

impl ClassCounts {
    pub fn of<'a>(labels: impl IntoIterator<Item = &'a Label>) -> Self {
        let mut c = Self::default();
        labels.into_iter().for_each(|l| c.counts[l.index()] += 1);
        c
    }

    pub fn get(&self, label: Label) -> usize {
        self.counts[label.index()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

impl std::fmt::Display for ClassCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = Label::ALL.iter().map(|l| format!("{l}: {}", self.get(*l))).collect();
        write!(f, "{} (total {})", parts.join(", "), self.total())
    }
}

/// The csv reader accepts stray quotes silently, so quoting is checked
/// separately: a quote may only open a field, close it, or be doubled
/// inside it, and every opened field must be closed.
fn check_quoting(bytes: &[u8]) -> Result<(), IoError> {
    let mut in_quotes = false;
    let mut field_start = true;
    let mut opened_at = 0;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if in_quotes {
            if b == b'"' {
                if bytes.get(i + 1) == Some(&b'"') {
                    i += 1;
                } else {
                    in_quotes = false;
                    match bytes.get(i + 1) {
                        None | Some(b',') | Some(b'\n') | Some(b'\r') => {}
                        Some(_) => {
                            return Err(IoError::Quoting {
                                offset: i as u64 + 1,
                                reason: "closing quote followed by data".into(),
                            })
                        }
                    }
                }
            }
        } else {
            match b {
                b'"' if field_start => {
                    in_quotes = true;
                    opened_at = i;
                }
                b'"' => {
                    return Err(IoError::Quoting {
                        offset: i as u64,
                        reason: "quote inside an unquoted field".into(),
                    })
                }
                _ => {}
            }
            field_start = matches!(b, b',' | b'\n' | b'\r');
            i += 1;
            continue;
        }
        field_start = false;
        i += 1;
    }
    if in_quotes {
        return Err(IoError::Quoting {
            offset: opened_at as u64,
            reason: "quoted field is never closed".into(),
        });
    }
    Ok(())
}

pub fn parse_dataset(bytes: &[u8]) -> Result<Vec<DatasetRecord>, IoError> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(IoError::EmptyDataset);
    }
    check_quoting(bytes)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
            .ok_or_else(|| IoError::MissingColumn(name.to_string()))
    };
    let (label_col, text_col) = (column("label")?, column("text")?);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let label = row[label_col]
            .parse::<Label>()
            .map_err(|_| IoError::UnknownLabel {
                line,
                label: row[label_col].to_string(),
            })?;
        out.push(DatasetRecord {
            label,
            text: row[text_col].to_string(),
        });
    }
    if out.is_empty() {
        return Err(IoError::EmptyDataset);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<(Vec<DatasetRecord>, ClassCounts), IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    let records = parse_dataset(&bytes)?;
    let counts = ClassCounts::of(records.iter().map(|r| &r.label));
    Ok((records, counts))
}

pub fn dataset_to_csv(records: &[DatasetRecord]) -> Result<Vec<u8>, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "text"])?;
    for r in records {
        w.write_record([r.label.name(), r.text.as_str()])?;
    }
    w.flush().map_err(|e| IoError::io(Path::new("<memory>"), e))?;
    w.into_inner().map_err(|e| IoError::Csv(e.to_string()))
}

/// Reads one message per line, skipping nothing: blank lines are messages
/// too and clean to the empty string.
pub fn read_lines(input: &str) -> Vec<String> {
    input.lines().map(str::to_string).collect()
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| IoError::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp-write");
    let mut f = fs::File::create(&tmp).map_err(|e| IoError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| IoError::io(&tmp, e))?;
    f.sync_all().map_err(|e| IoError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| IoError::io(path, e))
}
