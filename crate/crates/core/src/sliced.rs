//! Monte Carlo sliced Wasserstein-1 estimators.
//!
//! Activations are projected onto `s` random unit directions and the exact
//! one-dimensional W1 is averaged over directions. Slice sums run
//! sequentially in slice order so results are bitwise reproducible.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::ot1d::{sorted_w1, w1_sorted_gaussian, Sample1D};
use crate::special_fns::{sample_unit_sphere, RngStream};

/// Activations of one layer for a batch: row `i` is `h_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationBatch {
    values: Array2<f64>,
    layer_index: usize,
}

impl ActivationBatch {
    pub fn new(values: Array2<f64>, layer_index: usize) -> Result<Self> {
        let (b, d) = values.dim();
        if b == 0 || d == 0 {
            return Err(Error::domain(format!("activation batch must be non-empty, got {b}x{d}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("activation batch contains non-finite values"));
        }
        Ok(Self {
            values,
            layer_index,
        })
    }

    /// Skips the finiteness scan; used on the training hot path where a
    /// diverging run is detected from the loss instead.
    pub(crate) fn from_array_unchecked(values: Array2<f64>, layer_index: usize) -> Self {
        Self {
            values,
            layer_index,
        }
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn batch_size(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// `s` unit directions in `R^d`, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSet {
    directions: Array2<f64>,
    /// `(seed, stream_id)` of the stream the directions were drawn from.
    provenance: Option<(u64, u64)>,
}

impl SliceSet {
    /// Draws `s` i.i.d. uniform directions on `S^{d-1}`.
    pub fn sample(rng: &mut RngStream, s: usize, d: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::domain("slice count must be at least 1"));
        }
        let provenance = Some((rng.seed(), rng.stream_id()));
        let mut directions = Array2::zeros((s, d));
        for mut row in directions.rows_mut() {
            let theta = sample_unit_sphere(rng, d)?;
            row.iter_mut().zip(theta).for_each(|(r, t)| *r = t);
        }
        Ok(Self {
            directions,
            provenance,
        })
    }

    /// Wraps caller-supplied directions; every row must have unit norm within 1e-12.
    pub fn from_directions(directions: Array2<f64>) -> Result<Self> {
        let (s, d) = directions.dim();
        if s == 0 || d == 0 {
            return Err(Error::domain(format!("slice set must be non-empty, got {s}x{d}")));
        }
        for (k, row) in directions.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !((norm - 1.0).abs() <= 1e-12) {
                return Err(Error::domain(format!("slice {k} has norm {norm}, expected 1")));
            }
        }
        Ok(Self {
            directions,
            provenance: None,
        })
    }

    pub fn directions(&self) -> ArrayView2<'_, f64> {
        self.directions.view()
    }

    pub fn provenance(&self) -> Option<(u64, u64)> {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.directions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }
}

/// `b×s` matrix of projections `⟨h_i, θ_k⟩`.
pub(crate) fn projections(
    values: ArrayView2<'_, f64>,
    directions: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if values.ncols() != directions.ncols() {
        return Err(Error::domain(format!(
            "activation dimension {} does not match slice dimension {}",
            values.ncols(),
            directions.ncols()
        )));
    }
    Ok(values.dot(&directions.t()))
}

/// Projects every row of `batch` onto `theta`.
pub fn project(batch: &ActivationBatch, theta: ArrayView1<'_, f64>) -> Result<Sample1D> {
    let theta = theta.insert_axis(Axis(0));
    let p = projections(batch.values(), theta)?;
    Ok(Sample1D::from_vec_unchecked(p.column(0).to_vec()))
}

fn sorted_column(p: &Array2<f64>, k: usize) -> Vec<f64> {
    let mut col = p.column(k).to_vec();
    col.sort_by(f64::total_cmp);
    col
}

/// Monte Carlo estimate of `SW1(N(0, I), ν_h)` using the analytic Gaussian
/// target on every slice.
pub fn sw1_to_gaussian(batch: &ActivationBatch, slices: &SliceSet) -> Result<f64> {
    let p = projections(batch.values(), slices.directions())?;
    let mut total = 0.0;
    for k in 0..slices.len() {
        total += w1_sorted_gaussian(&sorted_column(&p, k))?;
    }
    Ok(total / slices.len() as f64)
}

/// Sliced W1 between two equal-size batches, e.g. activations against a
/// sample of `N(0, I)` draws standing in for the Gaussian measure.
pub fn sw1_empirical(
    batch: &ActivationBatch,
    reference: &ActivationBatch,
    slices: &SliceSet,
) -> Result<f64> {
    if batch.values.dim() != reference.values.dim() {
        return Err(Error::domain(format!(
            "sliced W1 needs equal shapes, got {:?} and {:?}",
            batch.values.dim(),
            reference.values.dim()
        )));
    }
    let p = projections(batch.values(), slices.directions())?;
    let q = projections(reference.values(), slices.directions())?;
    let mut total = 0.0;
    for k in 0..slices.len() {
        total += sorted_w1(&sorted_column(&p, k), &sorted_column(&q, k));
    }
    Ok(total / slices.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot1d::{w1_empirical_empirical, w1_empirical_gaussian};
    use crate::special_fns::SQRT_2_OVER_PI;
    use ndarray::{array, Array1};

    #[test]
    fn project_examples() {
        let zero = ActivationBatch::new(Array2::zeros((3, 2)), 0).unwrap();
        let theta = array![0.6, 0.8];
        assert_eq!(project(&zero, theta.view()).unwrap().values(), &[0.0, 0.0, 0.0]);

        let b = ActivationBatch::new(array![[3.0, 4.0], [1.0, -2.0]], 1).unwrap();
        assert_eq!(project(&b, theta.view()).unwrap().values()[0], 5.0);
        let e1 = array![0.0, 1.0];
        assert_eq!(project(&b, e1.view()).unwrap().values(), &[4.0, -2.0]);

        let bad = Array1::from(vec![1.0, 0.0, 0.0]);
        assert!(project(&b, bad.view()).is_err());
    }

    #[test]
    fn zero_batch_gives_point_mass_distance() {
        let mut rng = RngStream::new(11, 0);
        let zero = ActivationBatch::new(Array2::zeros((5, 4)), 0).unwrap();
        let slices = SliceSet::sample(&mut rng, 16, 4).unwrap();
        let w = sw1_to_gaussian(&zero, &slices).unwrap();
        assert!((w - SQRT_2_OVER_PI).abs() < 1e-15);
    }

    #[test]
    fn single_row_single_slice_is_exact() {
        let mut rng = RngStream::new(5, 9);
        let h = ActivationBatch::new(array![[0.3, -1.1, 2.0]], 0).unwrap();
        let slices = SliceSet::sample(&mut rng, 1, 3).unwrap();
        let direct = w1_empirical_gaussian(&project(&h, slices.directions().row(0)).unwrap()).unwrap();
        assert_eq!(sw1_to_gaussian(&h, &slices).unwrap(), direct);
    }

    #[test]
    fn empirical_reference_identity_and_d1() {
        let mut rng = RngStream::new(2, 2);
        let a = ActivationBatch::new(array![[0.1], [2.0], [-0.7]], 0).unwrap();
        let b = ActivationBatch::new(array![[1.1], [0.4], [-3.0]], 0).unwrap();
        let slices = SliceSet::sample(&mut rng, 8, 1).unwrap();
        assert_eq!(sw1_empirical(&a, &a, &slices).unwrap(), 0.0);
        let mut expected = 0.0;
        for theta in slices.directions().rows() {
            assert!(theta[0] == 1.0 || theta[0] == -1.0);
            let pa: Vec<f64> = a.values().column(0).iter().map(|v| v * theta[0]).collect();
            let pb: Vec<f64> = b.values().column(0).iter().map(|v| v * theta[0]).collect();
            expected += w1_empirical_empirical(&Sample1D::new(pa).unwrap(), &Sample1D::new(pb).unwrap())
                .unwrap();
        }
        expected /= slices.len() as f64;
        assert_eq!(sw1_empirical(&a, &b, &slices).unwrap(), expected);
    }

    #[test]
    fn shape_checks() {
        assert!(ActivationBatch::new(Array2::zeros((0, 3)), 0).is_err());
        assert!(ActivationBatch::new(array![[f64::NAN]], 0).is_err());
        assert!(SliceSet::from_directions(array![[1.0, 1.0]]).is_err());
        let a = ActivationBatch::new(Array2::zeros((2, 3)), 0).unwrap();
        let b = ActivationBatch::new(Array2::zeros((3, 3)), 0).unwrap();
        let s = SliceSet::from_directions(array![[1.0, 0.0, 0.0]]).unwrap();
        assert!(sw1_empirical(&a, &b, &s).is_err());
        let s2 = SliceSet::from_directions(array![[1.0, 0.0]]).unwrap();
        assert!(sw1_to_gaussian(&a, &s2).is_err());
    }
}
