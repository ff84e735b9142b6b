//! Self-describing dense matrix files.
//!
//! ```text
//! # symtransfer-matrix 1
//! # name: gram_w
//! # rows: 2
//! # cols: 2
//! # format: text
//! # labels: ["a","b"]
//! # provenance: solve-perm seed=0
//! 1e0 -5e-1
//! -5e-1 1e0
//! ```
//!
//! Binary files carry the same header followed by `# end` and the row-major
//! payload as little-endian `f64`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// First header line of every matrix file.
pub const MAGIC: &str = "# symtransfer-matrix 1";

const END_MARKER: &str = "# end";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadFormat {
    #[default]
    Text,
    Binary,
}

impl fmt::Display for PayloadFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PayloadFormat::Text => "text",
            PayloadFormat::Binary => "binary",
        })
    }
}

impl FromStr for PayloadFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "text" => Ok(PayloadFormat::Text),
            "binary" => Ok(PayloadFormat::Binary),
            other => Err(format!("unknown payload format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub name: String,
    pub data: Matrix,
    /// Row labels (or column labels when the matrix is not square and the
    /// count matches the columns).
    pub labels: Option<Vec<String>>,
    pub provenance: String,
    pub format: PayloadFormat,
}

impl MatrixFile {
    pub fn new(name: impl Into<String>, data: Matrix) -> Self {
        Self {
            name: name.into(),
            data,
            labels: None,
            provenance: String::new(),
            format: PayloadFormat::Text,
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn with_format(mut self, format: PayloadFormat) -> Self {
        self.format = format;
        self
    }

    fn validate(&self) -> Result<()> {
        let single_line = |what: &str, s: &str| {
            if s.contains('\n') || s.contains('\r') {
                Err(Error::InvalidInput(format!("{what} must fit on one line")))
            } else {
                Ok(())
            }
        };
        single_line("name", &self.name)?;
        single_line("provenance", &self.provenance)?;
        if !self.data.is_finite() {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.data.rows() && labels.len() != self.data.cols() {
                return Err(Error::InvalidInput(format!(
                    "{} labels for a {}x{} matrix",
                    labels.len(),
                    self.data.rows(),
                    self.data.cols()
                )));
            }
        }
        Ok(())
    }

    /// Serialized file contents.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut header = format!(
            "{MAGIC}\n# name: {}\n# rows: {}\n# cols: {}\n# format: {}\n",
            self.name,
            self.data.rows(),
            self.data.cols(),
            self.format
        );
        if let Some(labels) = &self.labels {
            let json = serde_json::to_string(labels).expect("string list serializes");
            header.push_str(&format!("# labels: {json}\n"));
        }
        header.push_str(&format!("# provenance: {}\n", self.provenance));
        let mut out = header.into_bytes();
        match self.format {
            PayloadFormat::Text => {
                for i in 0..self.data.rows() {
                    let line: Vec<String> = self.data.row(i).iter().map(|v| format!("{v:e}")).collect();
                    out.extend_from_slice(line.join(" ").as_bytes());
                    out.push(b'\n');
                }
            }
            PayloadFormat::Binary => {
                out.extend_from_slice(END_MARKER.as_bytes());
                out.push(b'\n');
                for v in self.data.as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    /// Parses file contents.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut line_no = 0;
        let mut next_line = |pos: &mut usize| -> Option<(usize, &[u8])> {
            if *pos >= bytes.len() {
                return None;
            }
            let end = bytes[*pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |k| *pos + k);
            let line = &bytes[*pos..end];
            *pos = end + 1;
            line_no += 1;
            Some((line_no, line.strip_suffix(b"\r").unwrap_or(line)))
        };
        let parse_err = |line: usize, message: String| Error::Parse { line, message };

        match next_line(&mut pos) {
            Some((_, raw)) if raw == MAGIC.as_bytes() => {}
            _ => return Err(parse_err(1, format!("missing {MAGIC:?} header line"))),
        }

        let mut name = None;
        let mut rows = None;
        let mut cols = None;
        let mut format = None;
        let mut labels = None;
        let mut provenance = None;
        let mut header_end_line = 1;
        let mut payload_start = pos;
        while let Some((ln, raw)) = next_line(&mut pos) {
            if !raw.starts_with(b"#") {
                break;
            }
            let text = utf8_line(ln, raw)?;
            header_end_line = ln;
            payload_start = pos;
            if text == END_MARKER {
                break;
            }
            let body = text.trim_start_matches('#').trim_start();
            let Some((key, value)) = body.split_once(':') else {
                return Err(parse_err(ln, format!("malformed header line {text:?}")));
            };
            let value = value.trim();
            let dim = |v: &str| v.parse::<usize>().map_err(|_| parse_err(ln, format!("bad {key} {v:?}")));
            match key.trim() {
                "name" => name = Some(value.to_string()),
                "rows" => rows = Some(dim(value)?),
                "cols" => cols = Some(dim(value)?),
                "format" => format = Some(value.parse::<PayloadFormat>().map_err(|e| parse_err(ln, e))?),
                "labels" => {
                    labels = Some(
                        serde_json::from_str::<Vec<String>>(value)
                            .map_err(|e| parse_err(ln, format!("bad labels: {e}")))?,
                    )
                }
                "provenance" => provenance = Some(value.to_string()),
                other => return Err(parse_err(ln, format!("unknown header key {other:?}"))),
            }
        }
        let missing = |what: &str| parse_err(header_end_line, format!("header has no {what}"));
        let rows = rows.ok_or_else(|| missing("rows"))?;
        let cols = cols.ok_or_else(|| missing("cols"))?;
        let format = format.ok_or_else(|| missing("format"))?;
        let total = rows
            .checked_mul(cols)
            .ok_or_else(|| parse_err(header_end_line, "shape overflows".into()))?;

        let payload = &bytes[payload_start.min(bytes.len())..];
        let values = match format {
            PayloadFormat::Binary => {
                let expected = total * 8;
                if payload.len() != expected {
                    return Err(parse_err(
                        header_end_line + 1,
                        format!("binary payload has {} bytes, header implies {expected}", payload.len()),
                    ));
                }
                let values: Vec<f64> = payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect();
                if let Some(k) = values.iter().position(|v| !v.is_finite()) {
                    return Err(parse_err(header_end_line + 1, format!("non-finite entry at index {k}")));
                }
                values
            }
            PayloadFormat::Text => {
                let text = utf8_line(header_end_line + 1, payload)?;
                let mut values = Vec::with_capacity(total);
                let mut row_count = 0;
                for (k, line) in text.lines().enumerate() {
                    let ln = header_end_line + 1 + k;
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    if line.starts_with('#') {
                        return Err(parse_err(ln, "header line inside payload".into()));
                    }
                    let row: Vec<f64> = line
                        .split_whitespace()
                        .map(|tok| match tok.parse::<f64>() {
                            Ok(v) if v.is_finite() => Ok(v),
                            Ok(_) => Err(parse_err(ln, format!("non-finite entry {tok:?}"))),
                            Err(_) => Err(parse_err(ln, format!("bad number {tok:?}"))),
                        })
                        .collect::<Result<_>>()?;
                    if row.len() != cols {
                        return Err(parse_err(ln, format!("row has {} entries, header says {cols}", row.len())));
                    }
                    row_count += 1;
                    if row_count > rows {
                        return Err(parse_err(ln, format!("more than {rows} rows")));
                    }
                    values.extend(row);
                }
                if row_count != rows {
                    return Err(parse_err(
                        header_end_line + 1 + text.lines().count(),
                        format!("payload has {row_count} rows, header says {rows}"),
                    ));
                }
                values
            }
        };
        let data = Matrix::new(rows, cols, values).map_err(|e| parse_err(header_end_line, e.to_string()))?;
        let file = MatrixFile {
            name: name.unwrap_or_default(),
            data,
            labels,
            provenance: provenance.unwrap_or_default(),
            format,
        };
        file.validate().map_err(|e| parse_err(header_end_line, e.to_string()))?;
        Ok(file)
    }
}

fn utf8_line(line: usize, raw: &[u8]) -> Result<&str> {
    std::str::from_utf8(raw).map_err(|_| Error::Parse {
        line,
        message: "line is not valid UTF-8".into(),
    })
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<MatrixFile> {
    MatrixFile::from_bytes(&fs::read(path)?)
}

pub fn write_matrix(m: &MatrixFile, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, m.to_bytes()?)?;
    Ok(())
}
