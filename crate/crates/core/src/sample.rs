//! Column-labeled numeric samples with estimator roles.

use crate::error::{EccError, Result};
use crate::stats;

/// Which columns play X, Y and the two covariate blocks.
///
/// Covariate blocks may contain X or Y themselves (e.g. `Z1 = Z2 = X` in
/// segmented regression).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roles {
    pub x: usize,
    pub y: usize,
    pub z1: Vec<usize>,
    pub z2: Vec<usize>,
}

impl Roles {
    /// Scalar or vector covariate shared by both sides (`Z1 = Z2 = Z`).
    pub fn shared(x: usize, y: usize, z: Vec<usize>) -> Self {
        Roles {
            x,
            y,
            z1: z.clone(),
            z2: z,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    roles: Roles,
}

impl Sample {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, roles: Roles) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(EccError::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(EccError::DimensionMismatch("columns have unequal lengths".into()));
        }
        if n < 3 {
            return Err(EccError::InvalidInput(format!("sample has {n} rows, need at least 3")));
        }
        if let Some((i, _)) = columns
            .iter()
            .enumerate()
            .find(|(_, c)| c.iter().any(|v| !v.is_finite()))
        {
            return Err(EccError::InvalidInput(format!("column '{}' has non-finite values", names[i])));
        }
        let d = columns.len();
        let in_range = |i: usize| i < d;
        if !in_range(roles.x)
            || !in_range(roles.y)
            || !roles.z1.iter().all(|&i| in_range(i))
            || !roles.z2.iter().all(|&i| in_range(i))
        {
            return Err(EccError::InvalidInput("role refers to a missing column".into()));
        }
        if roles.x == roles.y {
            return Err(EccError::InvalidInput("X and Y must be distinct columns".into()));
        }
        if roles.z1.is_empty() || roles.z2.is_empty() {
            return Err(EccError::InvalidInput("covariate blocks must be non-empty".into()));
        }
        if roles.z1.len() != roles.z2.len() {
            return Err(EccError::DimensionMismatch(format!(
                "Z1 has {} columns, Z2 has {}",
                roles.z1.len(),
                roles.z2.len()
            )));
        }
        Ok(Sample {
            names,
            columns,
            roles,
        })
    }

    /// Builds a sample from `(name, column)` pairs, resolving roles by name.
    pub fn from_named(
        columns: Vec<(String, Vec<f64>)>,
        x: &str,
        y: &str,
        z1: &[&str],
        z2: &[&str],
    ) -> Result<Self> {
        let (names, cols): (Vec<String>, Vec<Vec<f64>>) = columns.into_iter().unzip();
        let find = |name: &str| {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| EccError::InvalidInput(format!("no column named '{name}'")))
        };
        let roles = Roles {
            x: find(x)?,
            y: find(y)?,
            z1: z1.iter().map(|n| find(n)).collect::<Result<_>>()?,
            z2: z2.iter().map(|n| find(n)).collect::<Result<_>>()?,
        };
        Sample::new(names, cols, roles)
    }

    /// Trivariate `(x, y, z)` sample with `Z1 = Z2 = z`.
    pub fn xyz(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        Sample::new(
            vec!["x".into(), "y".into(), "z".into()],
            vec![x, y, z],
            Roles::shared(0, 1, vec![2]),
        )
    }

    pub fn n(&self) -> usize {
        self.columns[0].len()
    }

    pub fn roles(&self) -> &Roles {
        &self.roles
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, idx: usize) -> &[f64] {
        &self.columns[idx]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn x(&self) -> &[f64] {
        &self.columns[self.roles.x]
    }

    pub fn y(&self) -> &[f64] {
        &self.columns[self.roles.y]
    }

    pub fn z1(&self) -> Vec<&[f64]> {
        self.roles.z1.iter().map(|&i| self.columns[i].as_slice()).collect()
    }

    pub fn z2(&self) -> Vec<&[f64]> {
        self.roles.z2.iter().map(|&i| self.columns[i].as_slice()).collect()
    }

    /// Same columns and roles, rows picked (with repetition) by `rows`.
    pub fn select_rows(&self, rows: &[usize]) -> Sample {
        Sample {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| stats::gather(c, rows)).collect(),
            roles: self.roles.clone(),
        }
    }

    /// Restriction to the rows where `mask` holds; fails below 3 rows.
    pub fn restrict(&self, mask: &[bool]) -> Result<Sample> {
        let rows = stats::mask_rows(mask);
        if rows.len() < 3 {
            return Err(EccError::InsufficientEventSample {
                count: rows.len(),
                required: 3,
            });
        }
        Ok(self.select_rows(&rows))
    }

    /// Copy with column `idx` replaced by `values`.
    pub fn with_column(&self, idx: usize, values: Vec<f64>) -> Result<Sample> {
        if idx >= self.columns.len() {
            return Err(EccError::InvalidInput(format!("no column {idx}")));
        }
        let mut columns = self.columns.clone();
        columns[idx] = values;
        Sample::new(self.names.clone(), columns, self.roles.clone())
    }

    pub fn with_roles(&self, roles: Roles) -> Result<Sample> {
        Sample::new(self.names.clone(), self.columns.clone(), roles)
    }
}
