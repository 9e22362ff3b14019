//! Datasets and the parameter vector θ = (β0, β, σ²).

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Responses `y` (length n) and predictors `x` (n × p), optionally with the
/// simulation ground truth `(β0, β1, ..., βp)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    true_beta: Option<DVector<f64>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 rows, got {n}")));
        }
        if p < 1 {
            return Err(Error::InvalidInput("need at least 1 predictor".into()));
        }
        if y.len() != n {
            return Err(Error::InvalidInput(format!("response has length {} but x has {n} rows", y.len())));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite response at row {i}")));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite predictor at row {}, column {}", k % n, k / n)));
        }
        Ok(Dataset { x, y, true_beta: None })
    }

    /// Build from row-major predictor rows.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::InvalidInput(format!("row {i} has a different width")));
        }
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        Dataset::new(x, DVector::from_vec(y))
    }

    pub fn with_true_beta(mut self, beta: DVector<f64>) -> Result<Self> {
        if beta.len() != self.p() + 1 {
            return Err(Error::InvalidInput(format!(
                "true_beta must have length p+1 = {}, got {}",
                self.p() + 1,
                beta.len()
            )));
        }
        self.true_beta = Some(beta);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn true_beta(&self) -> Option<&DVector<f64>> {
        self.true_beta.as_ref()
    }

    /// Rows selected by index, in the given order. Keeps the ground truth.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let mut d = Dataset::new(x, y)?;
        d.true_beta = self.true_beta.clone();
        Ok(d)
    }

    /// Row indices sorted by row content (y first, then x left to right).
    /// Gives an ordering that does not depend on how the rows were stored.
    pub fn canonical_row_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n()).collect();
        idx.sort_by(|&a, &b| {
            self.y[a].total_cmp(&self.y[b]).then_with(|| {
                for j in 0..self.p() {
                    match self.x[(a, j)].total_cmp(&self.x[(b, j)]) {
                        Ordering::Equal => continue,
                        o => return o,
                    }
                }
                a.cmp(&b)
            })
        });
        idx
    }
}

/// θ = (β0, β, σ²) of the Gaussian linear model `y | x ~ N(β0 + xᵀβ, σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub beta0: f64,
    pub beta: DVector<f64>,
    pub sigma2: f64,
}

impl ModelParams {
    pub fn new(beta0: f64, beta: DVector<f64>, sigma2: f64) -> Result<Self> {
        let params = ModelParams { beta0, beta, sigma2 };
        params.validate()?;
        Ok(params)
    }

    pub fn zeros(p: usize, beta0: f64, sigma2: f64) -> Self {
        ModelParams { beta0, beta: DVector::zeros(p), sigma2 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Domain(format!("sigma2 must be positive and finite, got {}", self.sigma2)));
        }
        if !self.beta0.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// Indices j (0-based over β) with βⱼ ≠ 0.
    pub fn active_set(&self) -> Vec<usize> {
        self.beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.beta.iter().map(|b| b.abs()).sum()
    }

    /// `(β0, β1, ..., βp)` as one vector.
    pub fn coefficients(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.p() + 1);
        v[0] = self.beta0;
        v.rows_mut(1, self.p()).copy_from(&self.beta);
        v
    }

    pub fn predict_row(&self, data: &Dataset, i: usize) -> f64 {
        self.beta0 + data.x().row(i).transpose().dot(&self.beta)
    }

    /// Residuals `yᵢ − β0 − xᵢᵀβ`.
    pub fn residuals(&self, data: &Dataset) -> DVector<f64> {
        let mut r = data.y() - data.x() * &self.beta;
        r.add_scalar_mut(-self.beta0);
        r
    }
}
