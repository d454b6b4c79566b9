//! Square latency matrices in milliseconds. `+∞` marks a missing or dead link.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("matrix is empty")]
    Empty,
    #[error("row {row} has {len} entries, expected {n}")]
    NotSquare { row: usize, len: usize, n: usize },
    #[error("entry ({row}, {col}) is {value}; latencies must be non-negative")]
    Negative { row: usize, col: usize, value: f64 },
    #[error("diagonal entry ({0}, {0}) must be 0")]
    NonZeroDiagonal(usize),
    #[error("cannot parse latency `{0}`")]
    BadValue(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// Row-major `n × n` matrix; entry `(i, j)` is the latency from `i` to `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyMatrix {
    n: usize,
    data: Vec<f64>,
}

impl LatencyMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    /// Zero diagonal, `+∞` elsewhere.
    pub fn unknown(n: usize) -> Self {
        let mut m = Self {
            n,
            data: vec![f64::INFINITY; n * n],
        };
        for i in 0..n {
            m[(i, i)] = 0.0;
        }
        m
    }

    /// Zero diagonal and `value` on every off-diagonal entry.
    pub fn uniform(n: usize, value: f64) -> Self {
        let mut m = Self {
            n,
            data: vec![value; n * n],
        };
        for i in 0..n {
            m[(i, i)] = 0.0;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, MatrixError> {
        let n = rows.len();
        if n == 0 {
            return Err(MatrixError::Empty);
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(MatrixError::NotSquare { row: i, len: row.len(), n });
            }
            data.extend(row);
        }
        Ok(Self { n, data })
    }

    /// Rejects negative entries and non-zero diagonals.
    pub fn validate(&self) -> Result<(), MatrixError> {
        for i in 0..self.n {
            for j in 0..self.n {
                let v = self[(i, j)];
                if v.is_nan() || v < 0.0 {
                    return Err(MatrixError::Negative { row: i, col: j, value: v });
                }
            }
            if self[(i, i)] != 0.0 {
                return Err(MatrixError::NonZeroDiagonal(i));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.n;
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self[(i, j)].to_bits() == self[(j, i)].to_bits()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Relabels replicas: entry `(perm[i], perm[j])` of the result is entry `(i, j)` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out[(perm[i], perm[j])] = self[(i, j)];
            }
        }
        out
    }

    /// CSV with a header row of labels. Returns the labels and the matrix.
    pub fn from_csv(text: &str) -> Result<(Vec<String>, Self), MatrixError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or(MatrixError::Empty)?;
        let labels: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for line in lines {
            let row = line
                .split(',')
                .map(|s| parse_ms(s.trim()))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        let m = Self::from_rows(rows)?;
        if labels.len() != m.n {
            return Err(MatrixError::Csv(format!("{} labels for a {}-replica matrix", labels.len(), m.n)));
        }
        Ok((labels, m))
    }
}

impl Index<(usize, usize)> for LatencyMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for LatencyMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

impl fmt::Display for LatencyMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            for j in 0..self.n {
                if j > 0 {
                    f.write_str(" ")?;
                }
                write!(f, "{:>7}", format_ms(self[(i, j)]))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Formats milliseconds, spelling `+∞` as `inf`.
pub fn format_ms(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

pub fn parse_ms(s: &str) -> Result<f64, MatrixError> {
    match s {
        "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
        _ => s.parse::<f64>().map_err(|_| MatrixError::BadValue(s.to_string())),
    }
}

/// Milliseconds that serialize `+∞` as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ms(pub f64);

impl Serialize for Ms {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Ms {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct MsVisitor;
        impl Visitor<'_> for MsVisitor {
            type Value = Ms;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a latency in ms or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Ms, E> {
                Ok(Ms(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Ms, E> {
                Ok(Ms(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Ms, E> {
                Ok(Ms(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Ms, E> {
                parse_ms(v).map(Ms).map_err(E::custom)
            }
        }
        d.deserialize_any(MsVisitor)
    }
}

impl Serialize for LatencyMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.n))?;
        for i in 0..self.n {
            let row: Vec<Ms> = self.row(i).iter().map(|&v| Ms(v)).collect();
            seq.serialize_element(&row)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for LatencyMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct RowsVisitor;
        impl<'de> Visitor<'de> for RowsVisitor {
            type Value = LatencyMatrix;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a square array of latency rows")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<LatencyMatrix, A::Error> {
                let mut rows = Vec::new();
                while let Some(row) = seq.next_element::<Vec<Ms>>()? {
                    rows.push(row.into_iter().map(|m| m.0).collect());
                }
                LatencyMatrix::from_rows(rows).map_err(de::Error::custom)
            }
        }
        d.deserialize_seq(RowsVisitor)
    }
}
