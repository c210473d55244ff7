//! RMSE, MAE, Moran's I and the Moran's I discrepancy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridField, ObservationMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contiguity {
    /// Edge neighbours.
    #[default]
    Rook,
    /// Edge and corner neighbours.
    Queen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightNormalization {
    #[default]
    Binary,
    /// Each row of `W` sums to one.
    RowStandardized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialWeights {
    pub scheme: Contiguity,
    pub normalization: WeightNormalization,
}

impl SpatialWeights {
    pub fn rook() -> Self {
        SpatialWeights::default()
    }

    pub fn queen() -> Self {
        SpatialWeights {
            scheme: Contiguity::Queen,
            ..SpatialWeights::default()
        }
    }

    fn offsets(&self) -> &'static [(isize, isize)] {
        match self.scheme {
            Contiguity::Rook => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Contiguity::Queen => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }

    /// Neighbours of cell `(r, c)` in an `h × w` grid.
    pub fn neighbours(
        &self,
        r: usize,
        c: usize,
        h: usize,
        w: usize,
    ) -> impl Iterator<Item = usize> + '_ {
        self.offsets().iter().filter_map(move |&(dr, dc)| {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            (rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize)
                .then(|| rr as usize * w + cc as usize)
        })
    }

    /// `w_ij`; zero unless `j` neighbours `i`.
    pub fn weight(&self, i: usize, j: usize, h: usize, w: usize) -> f64 {
        let (r, c) = (i / w, i % w);
        if !self.neighbours(r, c, h, w).any(|n| n == j) {
            return 0.0;
        }
        match self.normalization {
            WeightNormalization::Binary => 1.0,
            WeightNormalization::RowStandardized => {
                1.0 / self.neighbours(r, c, h, w).count() as f64
            }
        }
    }
}

fn residuals<'a>(
    pred: &'a GridField,
    truth: &'a GridField,
    eval: &ObservationMask,
) -> Result<impl Iterator<Item = f64> + 'a> {
    pred.check_same_dims(truth.dims(), "prediction vs truth")?;
    pred.check_same_dims(eval.dims(), "prediction vs evaluation mask")?;
    let idx = eval.observed_indices();
    if idx.is_empty() {
        return Err(Error::UndefinedMetric("empty evaluation set".into()));
    }
    Ok(idx
        .into_iter()
        .map(|i| pred.values()[i] - truth.values()[i]))
}

pub fn rmse(pred: &GridField, truth: &GridField, eval: &ObservationMask) -> Result<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for r in residuals(pred, truth, eval)? {
        s += r * r;
        n += 1;
    }
    Ok((s / n as f64).sqrt())
}

pub fn mae(pred: &GridField, truth: &GridField, eval: &ObservationMask) -> Result<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for r in residuals(pred, truth, eval)? {
        s += r.abs();
        n += 1;
    }
    Ok(s / n as f64)
}

pub fn morans_i(field: &GridField, weights: &SpatialWeights) -> Result<f64> {
    let (h, w) = field.dims();
    let x = field.values();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let denom: f64 = dev.iter().map(|d| d * d).sum();
    if !(denom > 0.0) {
        return Err(Error::UndefinedMetric(
            "Moran's I of a constant field".into(),
        ));
    }
    let (mut num, mut total_w) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let nb: Vec<usize> = weights.neighbours(r, c, h, w).collect();
            let wij = match weights.normalization {
                WeightNormalization::Binary => 1.0,
                WeightNormalization::RowStandardized => 1.0 / nb.len() as f64,
            };
            for j in nb {
                num += wij * dev[i] * dev[j];
                total_w += wij;
            }
        }
    }
    if !(total_w > 0.0) {
        return Err(Error::UndefinedMetric(
            "spatial weights sum to zero (single-cell grid)".into(),
        ));
    }
    Ok(n / total_w * num / denom)
}

/// `|I(pred) − I(truth)|` over the full fields.
pub fn mi_discrepancy(
    pred: &GridField,
    truth: &GridField,
    weights: &SpatialWeights,
) -> Result<f64> {
    pred.check_same_dims(truth.dims(), "prediction vs truth")?;
    Ok((morans_i(pred, weights)? - morans_i(truth, weights)?).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> GridField {
        GridField::new(h, w, (0..h * w).map(|i| f(i / w, i % w)).collect()).unwrap()
    }

    fn all(h: usize, w: usize) -> ObservationMask {
        ObservationMask::full(h, w).unwrap()
    }

    #[test]
    fn rmse_mae_examples() {
        let t = grid(2, 2, |r, c| (r + c) as f64);
        assert_eq!(rmse(&t, &t, &all(2, 2)).unwrap(), 0.0);
        let off = grid(2, 2, |r, c| (r + c) as f64 + 0.5);
        assert_eq!(rmse(&off, &t, &all(2, 2)).unwrap(), 0.5);
        let z = grid(1, 2, |_, _| 0.0);
        let p = grid(1, 2, |_, c| if c == 0 { 3.0 } else { 4.0 });
        assert!((rmse(&p, &z, &all(1, 2)).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        let p = grid(1, 2, |_, c| if c == 0 { 1.0 } else { -3.0 });
        assert_eq!(mae(&p, &z, &all(1, 2)).unwrap(), 2.0);
        let p = grid(1, 2, |_, c| if c == 0 { 2.0 } else { -2.0 });
        assert_eq!(mae(&p, &z, &all(1, 2)).unwrap(), 2.0);
    }

    #[test]
    fn empty_eval_set() {
        let t = grid(2, 2, |_, _| 1.0);
        let e = ObservationMask::empty(2, 2).unwrap();
        assert!(matches!(rmse(&t, &t, &e), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn eval_mask_restricts() {
        let t = grid(1, 3, |_, _| 0.0);
        let p = grid(1, 3, |_, c| c as f64);
        let e = ObservationMask::from_indices(1, 3, [0]).unwrap();
        assert_eq!(rmse(&p, &t, &e).unwrap(), 0.0);
    }

    #[test]
    fn constant_field_undefined() {
        assert!(matches!(
            morans_i(&grid(3, 3, |_, _| 2.0), &SpatialWeights::rook()),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn checkerboard_and_ramp() {
        let cb = grid(4, 4, |r, c| if (r + c) % 2 == 0 { 1.0 } else { -1.0 });
        assert_eq!(morans_i(&cb, &SpatialWeights::rook()).unwrap(), -1.0);
        let ramp = grid(8, 8, |_, c| c as f64);
        assert!(morans_i(&ramp, &SpatialWeights::rook()).unwrap() > 0.5);
    }

    #[test]
    fn weights_symmetry_and_rows() {
        let b = SpatialWeights::queen();
        for i in 0..12 {
            assert_eq!(b.weight(i, i, 3, 4), 0.0);
            for j in 0..12 {
                assert_eq!(b.weight(i, j, 3, 4), b.weight(j, i, 3, 4));
            }
        }
        let rs = SpatialWeights {
            normalization: WeightNormalization::RowStandardized,
            ..SpatialWeights::rook()
        };
        for i in 0..12 {
            let s: f64 = (0..12).map(|j| rs.weight(i, j, 3, 4)).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn discrepancy_symmetric_and_zero() {
        let a = grid(4, 4, |r, c| (r * 3 + c * c) as f64);
        let b = grid(4, 4, |r, c| ((r + 2 * c) % 3) as f64);
        let w = SpatialWeights::rook();
        assert_eq!(mi_discrepancy(&a, &a, &w).unwrap(), 0.0);
        assert_eq!(
            mi_discrepancy(&a, &b, &w).unwrap(),
            mi_discrepancy(&b, &a, &w).unwrap()
        );
    }
}
