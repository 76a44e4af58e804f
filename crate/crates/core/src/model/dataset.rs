use std::collections::HashMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{MermError, Result};

/// One observation: the mismeasured covariates and the side variables.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub x: &'a [f64],
    pub s: &'a [f64],
}

impl Observation<'_> {
    /// First mismeasured coordinate; most models are scalar in `x`.
    #[inline]
    pub fn x0(&self) -> f64 {
        self.x[0]
    }
}

/// Immutable sample of mismeasured covariates `x` (n x d) and named side columns.
///
/// Storage is row-major so that an [`Observation`] is two contiguous slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    x: Vec<f64>,
    side_names: Vec<String>,
    side: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from column vectors. All columns must have the same
    /// length and contain only finite values.
    pub fn from_columns(x_cols: Vec<Vec<f64>>, side_cols: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if x_cols.is_empty() {
            return Err(MermError::invalid("dataset needs at least one mismeasured column (d >= 1)"));
        }
        let n = x_cols[0].len();
        let d = x_cols.len();
        for (j, col) in x_cols.iter().enumerate() {
            if col.len() != n {
                return Err(MermError::dim(format!("x column {j}"), n, col.len()));
            }
        }
        let mut names = Vec::with_capacity(side_cols.len());
        for (name, col) in &side_cols {
            if col.len() != n {
                return Err(MermError::dim(format!("side column '{name}'"), n, col.len()));
            }
            if names.contains(name) {
                return Err(MermError::invalid(format!("duplicate side column '{name}'")));
            }
            names.push(name.clone());
        }
        let ns = side_cols.len();
        let mut x = vec![0.0; n * d];
        let mut side = vec![0.0; n * ns];
        for i in 0..n {
            for (j, col) in x_cols.iter().enumerate() {
                let v = col[i];
                if !v.is_finite() {
                    return Err(MermError::NonFinite {
                        what: format!("x column {j}"),
                        row: i,
                    });
                }
                x[i * d + j] = v;
            }
            for (j, (name, col)) in side_cols.iter().enumerate() {
                let v = col[i];
                if !v.is_finite() {
                    return Err(MermError::NonFinite {
                        what: format!("side column '{name}'"),
                        row: i,
                    });
                }
                side[i * ns + j] = v;
            }
        }
        Ok(Self {
            n,
            d,
            x,
            side_names: names,
            side,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn side_names(&self) -> &[String] {
        &self.side_names
    }

    pub fn side_index(&self, name: &str) -> Option<usize> {
        self.side_names.iter().position(|s| s == name)
    }

    /// Index of a side column, or an error naming the missing column.
    pub fn require_side(&self, name: &str) -> Result<usize> {
        self.side_index(name)
            .ok_or_else(|| MermError::invalid(format!("dataset has no side column '{name}'")))
    }

    #[inline]
    pub fn obs(&self, i: usize) -> Observation<'_> {
        let ns = self.side_names.len();
        Observation {
            x: &self.x[i * self.d..(i + 1) * self.d],
            s: &self.side[i * ns..(i + 1) * ns],
        }
    }

    pub fn x_column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.x[i * self.d + j]).collect()
    }

    pub fn side_column(&self, name: &str) -> Option<Vec<f64>> {
        let ns = self.side_names.len();
        let j = self.side_index(name)?;
        Some((0..self.n).map(|i| self.side[i * ns + j]).collect())
    }

    /// Copy of the dataset with every mismeasured coordinate replaced by `f(x)`.
    pub fn map_x(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let x_cols = (0..self.d)
            .map(|j| self.x_column(j).into_iter().map(&f).collect())
            .collect();
        let side_cols = self
            .side_names
            .iter()
            .map(|name| (name.clone(), self.side_column(name).unwrap()))
            .collect();
        Self::from_columns(x_cols, side_cols)
    }
}

/// A side column resolved to its position; models keep these so that row
/// access is a slice index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SideColumn {
    pub name: String,
    pub index: usize,
}

impl SideColumn {
    pub fn resolve(names: &[String], name: &str) -> Result<Self> {
        let index = names
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| MermError::invalid(format!("dataset has no side column '{name}'")))?;
        Ok(Self {
            name: name.to_string(),
            index,
        })
    }

    /// Errors unless `data` stores this column at the same position.
    pub fn check(&self, data: &Dataset) -> Result<()> {
        match data.side_names().get(self.index) {
            Some(n) if *n == self.name => Ok(()),
            _ => Err(MermError::invalid(format!(
                "dataset layout does not match: expected side column '{}' at position {}",
                self.name, self.index
            ))),
        }
    }

    #[inline]
    pub fn get(&self, obs: &Observation<'_>) -> f64 {
        obs.s[self.index]
    }
}

/// Assignment of CSV header names to dataset roles.
///
/// Side columns are stored under their role names: `y`, `w1..wk`, `z`, `q`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRoles {
    /// Mismeasured covariates x1..xd (at least one).
    pub x: Vec<String>,
    #[serde(default)]
    pub y: Option<String>,
    #[serde(default)]
    pub w: Vec<String>,
    #[serde(default)]
    pub z: Option<String>,
    #[serde(default)]
    pub q: Option<String>,
}

impl ColumnRoles {
    /// `(role name, csv header)` pairs for the side columns, in storage order.
    pub fn side_roles(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if let Some(y) = &self.y {
            out.push(("y".to_string(), y.clone()));
        }
        for (k, w) in self.w.iter().enumerate() {
            out.push((format!("w{}", k + 1), w.clone()));
        }
        if let Some(z) = &self.z {
            out.push(("z".to_string(), z.clone()));
        }
        if let Some(q) = &self.q {
            out.push(("q".to_string(), q.clone()));
        }
        out
    }
}

/// Reads a headed CSV and assigns columns by role. Empty, unparsable or
/// non-finite cells are rejected with their line number and column name.
pub fn read_csv<R: Read>(reader: R, roles: &ColumnRoles) -> Result<Dataset> {
    if roles.x.is_empty() {
        return Err(MermError::invalid("column roles must name at least one x column"));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| MermError::invalid(format!("cannot read CSV header: {e}")))?
        .clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let lookup = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| MermError::invalid(format!("CSV has no column '{name}'")))
    };
    let x_idx = roles.x.iter().map(|h| lookup(h)).collect::<Result<Vec<_>>>()?;
    let side_roles = roles.side_roles();
    let side_idx = side_roles
        .iter()
        .map(|(_, h)| lookup(h))
        .collect::<Result<Vec<_>>>()?;

    let mut x_cols = vec![Vec::new(); x_idx.len()];
    let mut side_cols = vec![Vec::new(); side_idx.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| MermError::invalid(format!("CSV parse error: {e}")))?;
        let line = row + 2;
        let cell = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| {
                MermError::invalid(format!(
                    "line {line}, column '{}': cannot parse '{raw}' as a number",
                    &headers[col]
                ))
            })?;
            if !v.is_finite() {
                return Err(MermError::invalid(format!(
                    "line {line}, column '{}': non-finite value",
                    &headers[col]
                )));
            }
            Ok(v)
        };
        for (k, &col) in x_idx.iter().enumerate() {
            x_cols[k].push(cell(col)?);
        }
        for (k, &col) in side_idx.iter().enumerate() {
            side_cols[k].push(cell(col)?);
        }
    }
    let side = side_roles
        .into_iter()
        .map(|(role, _)| role)
        .zip(side_cols)
        .collect();
    Dataset::from_columns(x_cols, side)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_and_nonfinite_columns() {
        let err = Dataset::from_columns(vec![vec![1.0, 2.0]], vec![("y".into(), vec![1.0])]);
        assert!(matches!(err, Err(MermError::DimensionMismatch { .. })));
        let err = Dataset::from_columns(vec![vec![1.0, f64::NAN]], vec![]);
        assert!(matches!(err, Err(MermError::NonFinite { row: 1, .. })));
        assert!(Dataset::from_columns(vec![], vec![]).is_err());
    }

    #[test]
    fn observation_slices_are_rows() {
        let data = Dataset::from_columns(
            vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            vec![("y".into(), vec![5.0, 6.0]), ("z".into(), vec![7.0, 8.0])],
        )
        .unwrap();
        let o = data.obs(1);
        assert_eq!(o.x, &[2.0, 4.0]);
        assert_eq!(o.s, &[6.0, 8.0]);
        assert_eq!(data.side_index("z"), Some(1));
    }

    #[test]
    fn csv_roles_and_bad_cells() {
        let text = "a,b,c\n1,2,3\n4,5,6\n";
        let roles = ColumnRoles {
            x: vec!["b".into()],
            y: Some("a".into()),
            z: Some("c".into()),
            ..Default::default()
        };
        let data = read_csv(text.as_bytes(), &roles).unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.x_column(0), vec![2.0, 5.0]);
        assert_eq!(data.side_column("z").unwrap(), vec![3.0, 6.0]);

        let bad = "a,b,c\n1,,3\n";
        let err = read_csv(bad.as_bytes(), &roles).unwrap_err();
        assert!(err.to_string().contains("line 2"));
        let nan = "a,b,c\n1,NaN,3\n";
        assert!(read_csv(nan.as_bytes(), &roles).is_err());
    }
}
