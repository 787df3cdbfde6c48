//! CSV ingestion into paired samples, CSV export, and JSON report output.
//!
//! Dialect: comma separated, optional header row, `.` decimal point.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{DcovError, Result};
use crate::sample::{Block, PairedSample};

/// A column selected by 0-based position or by header name.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl FromStr for ColumnRef {
    type Err = std::convert::Infallible;

    /// All-digit strings are indices; anything else is a name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        })
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "{i}"),
            ColumnRef::Name(n) => f.write_str(n),
        }
    }
}

/// Which columns form the X and Y blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub x_columns: Vec<ColumnRef>,
    pub y_columns: Vec<ColumnRef>,
}

impl ColumnSpec {
    pub fn new(x_columns: Vec<ColumnRef>, y_columns: Vec<ColumnRef>) -> Result<Self> {
        if x_columns.is_empty() || y_columns.is_empty() {
            return Err(DcovError::InvalidArgument(
                "column lists must be nonempty".into(),
            ));
        }
        Ok(Self {
            x_columns,
            y_columns,
        })
    }

    /// Parses comma-separated lists such as `"0,2"` or `"gene_a,gene_b"`.
    pub fn parse(x: &str, y: &str) -> Result<Self> {
        let list = |s: &str| -> Vec<ColumnRef> {
            s.split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| t.parse().expect("infallible"))
                .collect()
        };
        Self::new(list(x), list(y))
    }

    /// Positions of the X and Y columns in a file with `arity` fields.
    fn resolve(
        &self,
        header: Option<&csv::StringRecord>,
        arity: usize,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        let find = |c: &ColumnRef| -> Result<usize> {
            let idx = match c {
                ColumnRef::Index(i) => Some(*i).filter(|&i| i < arity),
                ColumnRef::Name(name) => {
                    header.and_then(|h| h.iter().position(|f| f.trim() == name))
                }
            };
            idx.ok_or_else(|| DcovError::InvalidArgument(format!("unknown column `{c}`")))
        };
        let x = self
            .x_columns
            .iter()
            .map(find)
            .collect::<Result<Vec<_>>>()?;
        let y = self
            .y_columns
            .iter()
            .map(find)
            .collect::<Result<Vec<_>>>()?;
        let mut seen = HashSet::new();
        if let Some(dup) = x.iter().chain(&y).find(|&&i| !seen.insert(i)) {
            return Err(DcovError::InvalidArgument(format!(
                "column {dup} selected more than once"
            )));
        }
        Ok((x, y))
    }
}

/// Handling of unparsable or missing cells in the selected columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CsvMode {
    /// Reject the file, naming the row and column.
    #[default]
    Strict,
    /// Drop the row and log how many were dropped.
    Lenient,
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a paired sample from a CSV file, keeping file row order.
///
/// Rows are numbered as file lines (1-based, header included) in error
/// messages. Every row must have the same number of fields as the first.
pub fn read_csv(
    path: impl AsRef<Path>,
    spec: &ColumnSpec,
    has_header: bool,
    mode: CsvMode,
) -> Result<PairedSample> {
    let file = File::open(path.as_ref())?;
    read_csv_from(file, spec, has_header, mode)
}

/// [`read_csv`] from any reader.
pub fn read_csv_from<R: std::io::Read>(
    reader: R,
    spec: &ColumnSpec,
    has_header: bool,
    mode: CsvMode,
) -> Result<PairedSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let csv_err = |e: csv::Error| {
        let row = e.position().map_or(0, |p| p.line() as usize);
        DcovError::Csv {
            row,
            message: e.to_string(),
        }
    };

    let header = if has_header {
        match records.next() {
            Some(r) => Some(r.map_err(csv_err)?),
            None => {
                return Err(DcovError::Csv {
                    row: 1,
                    message: "missing header row".into(),
                })
            }
        }
    } else {
        None
    };

    let mut resolved: Option<(Vec<usize>, Vec<usize>, usize)> = header
        .as_ref()
        .map(|h| spec.resolve(Some(h), h.len()).map(|(x, y)| (x, y, h.len())))
        .transpose()?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut kept = 0usize;
    let mut dropped = 0usize;
    for record in records {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if resolved.is_none() {
            let (x, y) = spec.resolve(None, record.len())?;
            resolved = Some((x, y, record.len()));
        }
        let (xc, yc, arity) = resolved.as_ref().expect("resolved above");
        if record.len() != *arity {
            return Err(DcovError::Csv {
                row: line,
                message: format!("expected {arity} fields, found {}", record.len()),
            });
        }
        let mut row_x = Vec::with_capacity(xc.len());
        let mut row_y = Vec::with_capacity(yc.len());
        let mut bad = None;
        for (&c, out) in xc.iter().map(|c| (c, 0)).chain(yc.iter().map(|c| (c, 1))) {
            match parse_cell(&record[c]) {
                Some(v) if out == 0 => row_x.push(v),
                Some(v) => row_y.push(v),
                None => {
                    bad = Some(c);
                    break;
                }
            }
        }
        match (bad, mode) {
            (None, _) => {
                xs.extend(row_x);
                ys.extend(row_y);
                kept += 1;
            }
            (Some(c), CsvMode::Strict) => {
                return Err(DcovError::Csv {
                    row: line,
                    message: format!(
                        "column {c}: cannot parse `{}` as a finite number",
                        &record[c]
                    ),
                });
            }
            (Some(_), CsvMode::Lenient) => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with missing or non-numeric values");
    }
    if kept == 0 {
        return Err(DcovError::InvalidArgument("no usable data rows".into()));
    }
    let p = spec.x_columns.len();
    let q = spec.y_columns.len();
    PairedSample::new(Block::from_vec(kept, p, xs)?, Block::from_vec(kept, q, ys)?)
}

/// Writes a sample as CSV with header `x0,…,y0,…`. Values use the shortest
/// decimal form that parses back to the same `f64`.
pub fn write_csv(path: impl AsRef<Path>, sample: &PairedSample) -> Result<()> {
    let mut file = std::io::BufWriter::new(File::create(path.as_ref())?);
    write_csv_to(&mut file, sample)?;
    file.flush()?;
    Ok(())
}

/// [`write_csv`] to any writer.
pub fn write_csv_to<W: Write>(writer: W, sample: &PairedSample) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let to_csv = |e: csv::Error| DcovError::Csv {
        row: 0,
        message: e.to_string(),
    };
    let header: Vec<String> = (0..sample.p())
        .map(|j| format!("x{j}"))
        .chain((0..sample.q()).map(|j| format!("y{j}")))
        .collect();
    w.write_record(&header).map_err(to_csv)?;
    for i in 0..sample.n() {
        let o = sample.observation(i);
        w.write_record(o.x.iter().chain(o.y).map(|v| v.to_string()))
            .map_err(to_csv)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with fields in declaration order.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Shape, ShapeSpec};
    use proptest::prelude::*;

    fn spec(x: &str, y: &str) -> ColumnSpec {
        ColumnSpec::parse(x, y).unwrap()
    }

    fn read(text: &str, s: &ColumnSpec, header: bool, mode: CsvMode) -> Result<PairedSample> {
        read_csv_from(text.as_bytes(), s, header, mode)
    }

    #[test]
    fn three_rows_by_index() {
        let s = read("0,1\n2,3\n4,5\n", &spec("0", "1"), false, CsvMode::Strict).unwrap();
        assert_eq!((s.n(), s.p(), s.q()), (3, 1, 1));
        assert_eq!(s.x().as_slice(), &[0.0, 2.0, 4.0]);
        assert_eq!(s.y().as_slice(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn header_names_resolve_to_the_same_data() {
        let by_name = read(
            "a,b\n0,1\n2,3\n4,5\n",
            &spec("a", "b"),
            true,
            CsvMode::Strict,
        )
        .unwrap();
        let by_index = read("0,1\n2,3\n4,5\n", &spec("0", "1"), false, CsvMode::Strict).unwrap();
        assert_eq!(by_name, by_index);
    }

    #[test]
    fn column_groups() {
        let text = "g1,g2,g3,g4\n1,2,3,4\n5,6,7,8\n";
        let s = read(text, &spec("g3,g1", "3"), true, CsvMode::Strict).unwrap();
        assert_eq!((s.p(), s.q()), (2, 1));
        assert_eq!(s.x().row(1), &[7.0, 5.0]);
        assert_eq!(s.y().as_slice(), &[4.0, 8.0]);
    }

    #[test]
    fn strict_mode_names_row_and_column() {
        let err = read(
            "a,b\n1,2\n3,oops\n5,6\n",
            &spec("a", "b"),
            true,
            CsvMode::Strict,
        )
        .unwrap_err();
        match err {
            DcovError::Csv { row, message } => {
                assert_eq!(row, 3);
                assert!(
                    message.contains("column 1") && message.contains("oops"),
                    "{message}"
                );
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read("1,\n", &spec("0", "1"), false, CsvMode::Strict),
            Err(DcovError::Csv { .. })
        ));
    }

    #[test]
    fn lenient_mode_drops_bad_rows() {
        let s = read(
            "a,b\n1,2\n3,oops\n5,\n7,8\n",
            &spec("a", "b"),
            true,
            CsvMode::Lenient,
        )
        .unwrap();
        assert_eq!(s.x().as_slice(), &[1.0, 7.0]);
        // Unselected columns may hold anything.
        let s = read("1,zz,2\n", &spec("0", "2"), false, CsvMode::Strict).unwrap();
        assert_eq!(s.n(), 1);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            read("1,2\n3,4,5\n", &spec("0", "1"), false, CsvMode::Strict),
            Err(DcovError::Csv { row: 2, .. })
        ));
        assert!(matches!(
            read("1,2\n", &spec("0", "7"), false, CsvMode::Strict),
            Err(DcovError::InvalidArgument(_))
        ));
        assert!(matches!(
            read("a,b\n1,2\n", &spec("a", "c"), true, CsvMode::Strict),
            Err(DcovError::InvalidArgument(_))
        ));
        assert!(matches!(
            read("a,b\n1,2\n", &spec("a", "a"), true, CsvMode::Strict),
            Err(DcovError::InvalidArgument(_))
        ));
        assert!(matches!(
            read("x,y\n", &spec("0", "1"), true, CsvMode::Strict),
            Err(DcovError::InvalidArgument(_))
        ));
        assert!(matches!(
            read("a,q\nz,z\n", &spec("0", "1"), true, CsvMode::Lenient),
            Err(DcovError::InvalidArgument(_))
        ));
        assert!(ColumnSpec::parse("", "1").is_err());
        assert!(matches!(
            read_csv(
                "/nonexistent/file.csv",
                &spec("0", "1"),
                false,
                CsvMode::Strict
            ),
            Err(DcovError::Io(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let s = generate(&ShapeSpec::new(Shape::Independent { p: 2, q: 3 }, 50, 0.0, 1).unwrap())
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_csv(&path, &s).unwrap();
        let back = read_csv(&path, &spec("x0,x1", "y0,y1,y2"), true, CsvMode::Strict).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(vals in prop::collection::vec((-1e300f64..1e300, -1e-300f64..1e-300), 1..30)) {
            let (x, y): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
            let s = PairedSample::from_columns(&x, &y).unwrap();
            let mut buf = Vec::new();
            write_csv_to(&mut buf, &s).unwrap();
            let back = read_csv_from(buf.as_slice(), &spec("x0", "y0"), true, CsvMode::Strict).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
