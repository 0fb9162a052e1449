use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature min/max scaling to `[−1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    /// Fit on rows of equal length. A constant feature gets the range
    /// `[v − 1, v + 1]`.
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut it = rows.into_iter();
        let first = it
            .next()
            .ok_or_else(|| Error::InvalidArgument("cannot fit a scaler on no data".into()))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in it {
            if row.len() != min.len() {
                return Err(Error::InvalidArgument("ragged rows in scaler fit".into()));
            }
            for (i, &v) in row.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        for i in 0..min.len() {
            if !(min[i].is_finite() && max[i].is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite feature {i}")));
            }
            if max[i] - min[i] <= 1e-12 * (1.0 + min[i].abs()) {
                min[i] -= 1.0;
                max[i] += 1.0;
            }
        }
        Ok(Self { min, max })
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() == self.max.len()
            && self
                .min
                .iter()
                .zip(&self.max)
                .all(|(a, b)| a.is_finite() && b.is_finite() && b > a)
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument("scaler needs max > min per feature".into()))
        }
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    #[inline]
    pub fn scale_value(&self, i: usize, v: f64) -> f64 {
        2.0 * (v - self.min[i]) / (self.max[i] - self.min[i]) - 1.0
    }

    #[inline]
    pub fn unscale_value(&self, i: usize, s: f64) -> f64 {
        self.min[i] + 0.5 * (s + 1.0) * (self.max[i] - self.min[i])
    }

    pub fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, v)| self.scale_value(i, *v)).collect()
    }

    pub fn unscale(&self, s: &[f64]) -> Vec<f64> {
        s.iter().enumerate().map(|(i, v)| self.unscale_value(i, *v)).collect()
    }
}

/// Input and target scalers of a distilled policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub inputs: MinMax,
    pub targets: MinMax,
}

impl Scaler {
    pub fn validate(&self) -> Result<()> {
        self.inputs.validate()?;
        self.targets.validate()
    }
}
