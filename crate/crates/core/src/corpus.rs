//! Extreme-classification repository text format.
//!
//! ```text
//! num_points num_features num_labels
//! l1,l2,... f:v f:v ...
//! ```
//!
//! A line with no labels starts directly with its `f:v` pairs (or is blank
//! before the first pair). Feature values must be finite and non-negative;
//! zero-valued pairs are dropped.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::codes::LabelId;
use crate::error::{Result, SolarError};
use crate::features::{Document, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusHeader {
    pub num_points: usize,
    pub num_features: usize,
    pub num_labels: usize,
}

/// Streaming reader yielding one [`Document`] per data line.
pub struct CorpusReader<R> {
    path: PathBuf,
    lines: std::io::Lines<R>,
    header: CorpusHeader,
    line_no: usize,
    emitted: usize,
    done: bool,
}

impl CorpusReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| SolarError::io(path, e))?;
        Self::new(BufReader::new(file), path)
    }
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, name: impl Into<PathBuf>) -> Result<Self> {
        let path = name.into();
        let mut lines = reader.lines();
        let err = |msg: &str| SolarError::Parse {
            path: path.clone(),
            line: 1,
            msg: msg.to_string(),
        };
        let first = match lines.next() {
            Some(Ok(l)) => l,
            Some(Err(e)) => return Err(SolarError::io(&path, e)),
            None => return Err(err("missing header line")),
        };
        let fields: Vec<&str> = first.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err("header must be \"num_points num_features num_labels\""));
        }
        let mut nums = [0usize; 3];
        for (slot, f) in nums.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| err(&format!("header field {f:?} is not a count")))?;
        }
        let header = CorpusHeader {
            num_points: nums[0],
            num_features: nums[1],
            num_labels: nums[2],
        };
        Ok(Self {
            path,
            lines,
            header,
            line_no: 1,
            emitted: 0,
            done: false,
        })
    }

    pub fn header(&self) -> CorpusHeader {
        self.header
    }

    fn parse_line(&self, line: &str) -> Result<Document> {
        let err = |col: usize, msg: String| SolarError::Parse {
            path: self.path.clone(),
            line: self.line_no,
            msg: format!("column {col}: {msg}"),
        };
        let mut labels: Vec<LabelId> = Vec::new();
        let mut tokens: Vec<(TokenId, f32)> = Vec::new();
        let mut first = true;
        for (col, field) in fields_with_columns(line) {
            let is_labels = first && !field.contains(':');
            first = false;
            if is_labels {
                for part in field.split(',').filter(|s| !s.is_empty()) {
                    let l: usize = part
                        .parse()
                        .map_err(|_| err(col, format!("bad label id {part:?}")))?;
                    if l >= self.header.num_labels {
                        return Err(err(
                            col,
                            format!("label {l} out of range (num_labels = {})", self.header.num_labels),
                        ));
                    }
                    labels.push(l as LabelId);
                }
                continue;
            }
            let (f, v) = field
                .split_once(':')
                .ok_or_else(|| err(col, format!("expected feature:value, found {field:?}")))?;
            let f: u64 = f.parse().map_err(|_| err(col, format!("bad feature id {f:?}")))?;
            if f as usize >= self.header.num_features {
                return Err(err(
                    col,
                    format!("feature {f} out of range (num_features = {})", self.header.num_features),
                ));
            }
            let v: f32 = v.parse().map_err(|_| err(col, format!("bad feature value {v:?}")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(err(col, format!("feature value {v} must be finite and non-negative")));
            }
            if v > 0.0 {
                tokens.push((f, v));
            }
        }
        labels.sort_unstable();
        labels.dedup();
        tokens.sort_unstable_by_key(|t| t.0);
        if tokens.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(err(1, "duplicate feature id".into()));
        }
        Ok(Document::new(self.emitted as u64, tokens, labels))
    }
}

fn fields_with_columns(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.split(' ')
        .scan(1usize, |col, f| {
            let start = *col;
            *col += f.chars().count() + 1;
            Some((start, f))
        })
        .filter(|(_, f)| !f.trim().is_empty())
        .map(|(c, f)| (c, f.trim()))
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let line = match self.lines.next() {
            Some(Ok(l)) => l,
            Some(Err(e)) => {
                self.done = true;
                return Some(Err(SolarError::io(&self.path, e)));
            }
            None => {
                self.done = true;
                if self.emitted != self.header.num_points {
                    return Some(Err(SolarError::Parse {
                        path: self.path.clone(),
                        line: self.line_no,
                        msg: format!(
                            "header declares {} points but file ends after {}",
                            self.header.num_points, self.emitted
                        ),
                    }));
                }
                return None;
            }
        };
        self.line_no += 1;
        if self.emitted == self.header.num_points {
            self.done = true;
            if line.trim().is_empty() {
                return None;
            }
            return Some(Err(SolarError::Parse {
                path: self.path.clone(),
                line: self.line_no,
                msg: format!("more data lines than the {} declared", self.header.num_points),
            }));
        }
        let doc = self.parse_line(&line);
        if doc.is_err() {
            self.done = true;
        }
        self.emitted += 1;
        Some(doc)
    }
}

/// Reads a whole corpus file into memory.
pub fn parse_corpus(path: impl AsRef<Path>) -> Result<(CorpusHeader, Vec<Document>)> {
    let reader = CorpusReader::open(path)?;
    let header = reader.header();
    let docs = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, docs))
}

/// Writes documents in the same format (`{:?}`-free, shortest float repr).
pub fn write_corpus<W: Write>(mut w: W, docs: &[Document], num_features: usize, num_labels: usize) -> std::io::Result<()> {
    writeln!(w, "{} {} {}", docs.len(), num_features, num_labels)?;
    for doc in docs {
        let labels: Vec<String> = doc.labels.iter().map(|l| l.to_string()).collect();
        w.write_all(labels.join(",").as_bytes())?;
        for &(t, v) in &doc.tokens {
            write!(w, " {t}:{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Vec<Document>> {
        CorpusReader::new(text.as_bytes(), "mem")?.collect()
    }

    #[test]
    fn parses_format_example() {
        let docs = read("2 5 3\n0,2 1:1 4:2\n1 0:0.5\n").unwrap();
        assert_eq!(docs[0].labels, vec![0, 2]);
        assert_eq!(docs[0].tokens, vec![(1, 1.0), (4, 2.0)]);
        assert_eq!(docs[1].labels, vec![1]);
        assert_eq!(docs[1].id, 1);
    }

    #[test]
    fn empty_label_field() {
        let docs = read("2 5 3\n 1:1 2:1\n3:4\n").unwrap();
        assert!(docs[0].labels.is_empty());
        assert!(docs[1].labels.is_empty());
        assert_eq!(docs[1].tokens, vec![(3, 4.0)]);
    }

    #[test]
    fn truncated_line_names_line() {
        let err = read("2 5 3\n0 1:1\n1 2:\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mem:3:"), "{msg}");
        assert!(msg.contains("column 3"), "{msg}");
    }

    #[test]
    fn out_of_range_ids_rejected() {
        assert!(read("1 5 3\n3 1:1\n").unwrap_err().to_string().contains("label 3"));
        assert!(read("1 5 3\n0 5:1\n").unwrap_err().to_string().contains("feature 5"));
    }

    #[test]
    fn bad_values_rejected() {
        assert!(read("1 5 3\n0 1:nan\n").is_err());
        assert!(read("1 5 3\n0 1:-1\n").is_err());
        assert!(read("1 5 3\n0 1:1 1:2\n").is_err());
        // zero weights are dropped
        assert!(read("1 5 3\n0 1:0\n").unwrap()[0].tokens.is_empty());
    }

    #[test]
    fn header_and_count_checks() {
        assert!(read("").is_err());
        assert!(read("1 2\n").is_err());
        assert!(read("x 2 3\n").is_err());
        assert!(read("3 5 3\n0 1:1\n").unwrap_err().to_string().contains("declares 3"));
        assert!(read("1 5 3\n0 1:1\n1 1:1\n").is_err());
        assert_eq!(read("1 5 3\n0 1:1\n\n").unwrap().len(), 1);
    }

    #[test]
    fn write_then_read() {
        let docs = vec![
            Document::new(0, vec![(1, 1.0), (7, 2.5)], vec![0, 4]),
            Document::new(1, vec![(3, 1.0)], vec![]),
        ];
        let mut buf = Vec::new();
        write_corpus(&mut buf, &docs, 10, 5).unwrap();
        assert_eq!(read(std::str::from_utf8(&buf).unwrap()).unwrap(), docs);
    }
}
