//! Discretised spatial domain: grid fields, observation masks, sampling and
//! point-to-grid rasterisation.
//!
//! Cells are stored row-major. Cell `(1,1)` of the usual 1-based notation is
//! index `(0,0)` here.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    /// Cell centre in cell units.
    pub fn coords(self) -> [f64; 2] {
        [self.row as f64, self.col as f64]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    height: usize,
    width: usize,
    values: Vec<f64>,
    pub cell_size: f64,
    /// World coordinates `(x, y)` of the centre of the first cell.
    pub origin: (f64, f64),
}

impl GridField {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return param_err(format!(
                "grid dimensions must be positive, got {height}x{width}"
            ));
        }
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} grid needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value at cell ({}, {})",
                i / width + 1,
                i % width + 1
            )));
        }
        Ok(GridField {
            height,
            width,
            values,
            cell_size: 1.0,
            origin: (0.0, 0.0),
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(value.is_finite());
        self.values[row * self.width + col] = value;
    }

    pub fn cell(&self, idx: usize) -> Cell {
        Cell::new(idx / self.width, idx % self.width)
    }

    pub fn check_same_dims(&self, other_dims: (usize, usize), what: &str) -> Result<()> {
        if self.dims() != other_dims {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other_dims.0, other_dims.1
            )));
        }
        Ok(())
    }

    /// Copy of `self` with every observed cell replaced by the value in `obs`.
    pub fn overwrite_observed(&self, obs: &GridField, mask: &ObservationMask) -> Result<GridField> {
        self.check_same_dims(obs.dims(), "overwrite source")?;
        self.check_same_dims(mask.dims(), "overwrite mask")?;
        let mut out = self.clone();
        for (i, &m) in mask.bits().iter().enumerate() {
            if m {
                out.values[i] = obs.values[i];
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObservationMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl ObservationMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return param_err(format!(
                "mask dimensions must be positive, got {height}x{width}"
            ));
        }
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} entries, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(ObservationMask {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![true; height * width])
    }

    pub fn from_indices(
        height: usize,
        width: usize,
        idx: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let mut m = Self::empty(height, width)?;
        for i in idx {
            if i >= m.bits.len() {
                return Err(Error::Shape(format!("mask index {i} out of range")));
            }
            m.bits[i] = true;
        }
        Ok(m)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn complement(&self) -> ObservationMask {
        ObservationMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub subsample_fraction: f64,
    /// Applies to the subsample, not the full grid.
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointObservation {
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

fn check_fraction(f: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return param_err(format!("{name} must lie in [0, 1], got {f}"));
    }
    Ok(())
}

/// Observes exactly `round(fraction * h * w)` cells chosen uniformly without
/// replacement.
pub fn sample_mask(h: usize, w: usize, fraction: f64, seed: u64) -> Result<ObservationMask> {
    check_fraction(fraction, "observed fraction")?;
    let n = h * w;
    let k = (fraction * n as f64).round() as usize;
    let mut rng = rng_from_seed(seed);
    let chosen = index::sample(&mut rng, n, k.min(n));
    ObservationMask::from_indices(h, w, chosen)
}

/// Partitions the observed cells of `mask` into train and test masks with
/// `|train| = round(train_fraction * |mask|)`.
pub fn split_mask(
    mask: &ObservationMask,
    train_fraction: f64,
    seed: u64,
) -> Result<(ObservationMask, ObservationMask)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return param_err(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        ));
    }
    let observed = mask.observed_indices();
    if observed.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "splitting needs at least 2 observed cells, mask has {}",
            observed.len()
        )));
    }
    let n_train = (train_fraction * observed.len() as f64).round() as usize;
    let mut rng = rng_from_seed(seed);
    let picked = index::sample(&mut rng, observed.len(), n_train);
    let mut train = ObservationMask::empty(mask.height, mask.width)?;
    for j in picked {
        train.bits[observed[j]] = true;
    }
    let mut test = mask.clone();
    for (t, &tr) in test.bits.iter_mut().zip(&train.bits) {
        if tr {
            *t = false;
        }
    }
    Ok((train, test))
}

/// Axis-aligned world-coordinate box `[xmin, xmax] x [ymin, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let b = BBox {
            xmin,
            ymin,
            xmax,
            ymax,
        };
        if ![xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite()) || xmax <= xmin || ymax <= ymin {
            return param_err(format!("degenerate bounding box {b:?}"));
        }
        Ok(b)
    }

    /// Tight box around the points, or `None` when it would be degenerate.
    pub fn enclosing(points: &[PointObservation]) -> Option<Self> {
        let mut it = points.iter();
        let p0 = it.next()?;
        let init = (p0.x, p0.y, p0.x, p0.y);
        let (xmin, ymin, xmax, ymax) = it.fold(init, |(a, b, c, d), p| {
            (a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y))
        });
        BBox::new(xmin, ymin, xmax, ymax).ok()
    }
}

#[derive(Debug, Clone)]
pub struct Raster {
    pub field: GridField,
    pub mask: ObservationMask,
    /// Points that fell outside the bounding box and were ignored.
    pub outside: usize,
}

// Half-open bins, except the upper edge of the box which belongs to the last
// bin. A point on an interior boundary therefore lands in the larger index.
fn bin(v: f64, lo: f64, hi: f64, n: usize) -> Option<usize> {
    if v < lo || v > hi {
        return None;
    }
    let step = (hi - lo) / n as f64;
    let i = ((v - lo) / step).floor() as usize;
    Some(i.min(n - 1))
}

/// Sums point values per cell. Rows follow `y`, columns follow `x`.
pub fn rasterize_points(
    points: &[PointObservation],
    h: usize,
    w: usize,
    bbox: BBox,
) -> Result<Raster> {
    if h == 0 || w == 0 {
        return param_err("raster dimensions must be positive");
    }
    let bbox = BBox::new(bbox.xmin, bbox.ymin, bbox.xmax, bbox.ymax)?;
    let mut per_cell: Vec<Vec<f64>> = vec![Vec::new(); h * w];
    let mut outside = 0;
    for p in points {
        if !(p.x.is_finite() && p.y.is_finite() && p.value.is_finite()) {
            return param_err(format!("non-finite point {p:?}"));
        }
        match (
            bin(p.y, bbox.ymin, bbox.ymax, h),
            bin(p.x, bbox.xmin, bbox.xmax, w),
        ) {
            (Some(r), Some(c)) => per_cell[r * w + c].push(p.value),
            _ => outside += 1,
        }
    }
    let mut values = vec![0.0; h * w];
    let mut bits = vec![false; h * w];
    for (i, vals) in per_cell.iter_mut().enumerate() {
        if vals.is_empty() {
            continue;
        }
        // Fixed summation order keeps the result independent of input order.
        vals.sort_by(f64::total_cmp);
        values[i] = vals.iter().sum();
        bits[i] = true;
    }
    let dx = (bbox.xmax - bbox.xmin) / w as f64;
    let dy = (bbox.ymax - bbox.ymin) / h as f64;
    let mut field = GridField::new(h, w, values)?;
    field.cell_size = dx;
    field.origin = (bbox.xmin + dx / 2.0, bbox.ymin + dy / 2.0);
    Ok(Raster {
        field,
        mask: ObservationMask::new(h, w, bits)?,
        outside,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_and_empty_masks() {
        assert_eq!(sample_mask(32, 32, 1.0, 9).unwrap().count(), 1024);
        assert_eq!(sample_mask(32, 32, 0.0, 9).unwrap().count(), 0);
    }

    #[test]
    fn half_mask_is_exact_and_reproducible() {
        let a = sample_mask(32, 32, 0.5, 42).unwrap();
        assert_eq!(a.count(), 512);
        assert_eq!(a, sample_mask(32, 32, 0.5, 42).unwrap());
        assert_ne!(a, sample_mask(32, 32, 0.5, 43).unwrap());
    }

    #[test]
    fn bad_fraction_rejected() {
        assert!(matches!(
            sample_mask(4, 4, 1.5, 0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            sample_mask(4, 4, -0.1, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn split_counts() {
        let m = ObservationMask::from_indices(4, 4, 0..10).unwrap();
        let (tr, te) = split_mask(&m, 0.8, 1).unwrap();
        assert_eq!((tr.count(), te.count()), (8, 2));

        let full = ObservationMask::full(32, 32).unwrap();
        let (tr, te) = split_mask(&full, 0.8, 5).unwrap();
        assert_eq!((tr.count(), te.count()), (819, 205));
    }

    #[test]
    fn split_needs_two_cells() {
        let m = ObservationMask::from_indices(3, 3, [4]).unwrap();
        assert!(matches!(
            split_mask(&m, 0.5, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn rasterize_sums_points_in_a_cell() {
        let pts = [
            PointObservation {
                x: 0.1,
                y: 0.1,
                value: 3.0,
            },
            PointObservation {
                x: 0.2,
                y: 0.3,
                value: 4.0,
            },
        ];
        let r = rasterize_points(&pts, 2, 2, BBox::new(0.0, 0.0, 2.0, 2.0).unwrap()).unwrap();
        assert_eq!(r.field.get(0, 0), 7.0);
        assert!(r.mask.get(0, 0));
        assert_eq!(r.mask.count(), 1);
    }

    #[test]
    fn rasterize_no_points() {
        let r = rasterize_points(&[], 3, 3, BBox::new(0.0, 0.0, 1.0, 1.0).unwrap()).unwrap();
        assert_eq!(r.mask.count(), 0);
        assert_eq!(r.outside, 0);
    }

    #[test]
    fn boundary_point_goes_to_larger_index() {
        // x = 1.0 is the boundary between columns 0 and 1.
        let pts = [PointObservation {
            x: 1.0,
            y: 0.5,
            value: 2.0,
        }];
        let r = rasterize_points(&pts, 2, 2, BBox::new(0.0, 0.0, 2.0, 2.0).unwrap()).unwrap();
        assert_eq!(r.mask.count(), 1);
        assert!(r.mask.get(0, 1));
        // upper edge of the box is closed
        let pts = [PointObservation {
            x: 2.0,
            y: 2.0,
            value: 1.0,
        }];
        let r = rasterize_points(&pts, 2, 2, BBox::new(0.0, 0.0, 2.0, 2.0).unwrap()).unwrap();
        assert!(r.mask.get(1, 1));
    }

    #[test]
    fn outside_points_are_counted() {
        let pts = [
            PointObservation {
                x: -1.0,
                y: 0.5,
                value: 2.0,
            },
            PointObservation {
                x: 0.5,
                y: 0.5,
                value: 2.0,
            },
        ];
        let r = rasterize_points(&pts, 2, 2, BBox::new(0.0, 0.0, 2.0, 2.0).unwrap()).unwrap();
        assert_eq!(r.outside, 1);
        assert_eq!(r.mask.count(), 1);
    }

    #[test]
    fn degenerate_bbox_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn mask_popcount(h in 1usize..20, w in 1usize..20, f in 0.0f64..=1.0, seed: u64) {
            let m = sample_mask(h, w, f, seed).unwrap();
            prop_assert_eq!(m.count(), (f * (h * w) as f64).round() as usize);
        }

        #[test]
        fn split_is_partition(f in 0.1f64..=1.0, tf in 0.05f64..0.95, seed: u64) {
            let m = sample_mask(10, 12, f, seed).unwrap();
            prop_assume!(m.count() >= 2);
            let (tr, te) = split_mask(&m, tf, seed ^ 1).unwrap();
            for i in 0..m.bits().len() {
                prop_assert!(!(tr.bits()[i] && te.bits()[i]));
                prop_assert_eq!(tr.bits()[i] || te.bits()[i], m.bits()[i]);
            }
            prop_assert_eq!(tr.count(), (tf * m.count() as f64).round() as usize);
        }

        #[test]
        fn rasterize_permutation_invariant(
            pts in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0, -1e3f64..1e3), 0..40),
            seed: u64,
        ) {
            let pts: Vec<_> = pts.into_iter().map(|(x, y, value)| PointObservation { x, y, value }).collect();
            let mut shuffled = pts.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng_from_seed(seed));
            let bb = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
            let a = rasterize_points(&pts, 5, 7, bb).unwrap();
            let b = rasterize_points(&shuffled, 5, 7, bb).unwrap();
            prop_assert_eq!(a.field, b.field);
            prop_assert_eq!(a.mask, b.mask);
        }
    }
}
