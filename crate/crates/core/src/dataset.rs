//! Observed data `(X, Y, C)` and its CSV interchange format.
//!
//! The CSV layout is a header row `x,y,c1,...,cp` followed by one row per
//! unit. Reals are written in Rust's shortest round-trip form, so reading a
//! written file reproduces the dataset bit for bit.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::glm::{BinaryResponse, DesignMatrix};

/// Binary treatment `x`, binary outcome `y` and confounders `c` (no intercept column).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: BinaryResponse,
    pub y: BinaryResponse,
    pub c: DesignMatrix,
}

impl Dataset {
    pub fn new(x: BinaryResponse, y: BinaryResponse, c: DesignMatrix) -> Result<Self> {
        if x.len() != y.len() || x.len() != c.rows() {
            return Err(Error::DimensionMismatch(format!(
                "x has {}, y has {}, c has {} rows",
                x.len(),
                y.len(),
                c.rows()
            )));
        }
        if c.has_intercept() {
            return Err(Error::InvalidInput("confounder matrix must not carry an intercept".into()));
        }
        Ok(Self { x, y, c })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn p(&self) -> usize {
        self.c.cols()
    }

    /// Design of the treatment model: intercept followed by `c1..cp`.
    pub fn treatment_design(&self) -> DesignMatrix {
        self.c.with_intercept()
    }

    pub fn resample(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(idx),
            y: self.y.select(idx),
            c: self.c.select_rows(idx),
        }
    }

    /// Same units with a replacement outcome vector.
    pub fn with_outcome(&self, y: BinaryResponse) -> Result<Dataset> {
        Dataset::new(self.x.clone(), y, self.c.clone())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["x".to_string(), "y".to_string()];
        header.extend((1..=self.p()).map(|j| format!("c{j}")));
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n() {
            let mut rec = vec![self.x.get(i).to_string(), self.y.get(i).to_string()];
            rec.extend(self.c.row(i).iter().map(f64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(csv_err)?.clone();
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        if names.len() < 2 || names[0] != "x" || names[1] != "y" {
            return Err(Error::Parse {
                row: 1,
                column: names.first().unwrap_or(&"").to_string(),
                message: "header must start with x,y".into(),
            });
        }
        for (j, name) in names.iter().enumerate().skip(2) {
            if *name != format!("c{}", j - 1) {
                return Err(Error::Parse {
                    row: 1,
                    column: name.to_string(),
                    message: format!("expected column c{}", j - 1),
                });
            }
        }
        let p = names.len() - 2;
        let (mut x, mut y, mut c) = (Vec::new(), Vec::new(), Vec::new());
        for (k, rec) in r.records().enumerate() {
            let row = k + 2;
            let rec = rec.map_err(|e| Error::Parse {
                row,
                column: String::new(),
                message: e.to_string(),
            })?;
            let parse_bin = |j: usize| -> Result<u8> {
                match rec.get(j).map(str::trim) {
                    Some("0") => Ok(0),
                    Some("1") => Ok(1),
                    other => Err(Error::Parse {
                        row,
                        column: names[j].to_string(),
                        message: format!("expected 0 or 1, found {:?}", other.unwrap_or("")),
                    }),
                }
            };
            x.push(parse_bin(0)?);
            y.push(parse_bin(1)?);
            for j in 0..p {
                let cell = rec.get(j + 2).unwrap_or("").trim();
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    column: names[j + 2].to_string(),
                    message: format!("not a number: {cell:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: names[j + 2].to_string(),
                        message: "non-finite value".into(),
                    });
                }
                c.push(v);
            }
        }
        let n = x.len();
        Dataset::new(
            BinaryResponse::new(x)?,
            BinaryResponse::new(y)?,
            DesignMatrix::new(n, p, c, false)?,
        )
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.position() {
        Some(pos) => Error::Parse {
            row: pos.line() as usize,
            column: String::new(),
            message: e.to_string(),
        },
        None => Error::Io(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(
            BinaryResponse::new(vec![1, 0, 1]).unwrap(),
            BinaryResponse::new(vec![0, 0, 1]).unwrap(),
            DesignMatrix::new(3, 2, vec![0.1, -2.5, 1.0 / 3.0, 4.0, -0.0, 1e-300], false).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let data = tiny();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y,c1,c2\n"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), data);
    }

    #[test]
    fn malformed_csv_reports_location() {
        let bad = "x,y,c1\n1,0,0.5\n0,2,0.1\n";
        match Dataset::read_csv(bad.as_bytes()).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "y");
            }
            e => panic!("unexpected {e:?}"),
        }
        let bad = "x,y,c1\n1,0,abc\n";
        assert!(matches!(Dataset::read_csv(bad.as_bytes()), Err(Error::Parse { row: 2, .. })));
        let bad = "x,z,c1\n1,0,1\n";
        assert!(matches!(Dataset::read_csv(bad.as_bytes()), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn shape_checks() {
        let d = tiny();
        assert!(Dataset::new(d.x.clone(), BinaryResponse::new(vec![1]).unwrap(), d.c.clone()).is_err());
        assert_eq!(d.treatment_design().cols(), 3);
        assert_eq!(d.resample(&[2, 2]).n(), 2);
    }
}
