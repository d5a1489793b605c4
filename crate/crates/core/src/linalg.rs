//! Dense vector and matrix primitives shared by every other module.
//!
//! All diagnostic math is `f64`. Transcendentals come from `libm` so results
//! are identical on every target.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};

/// Tolerance on `|‖u‖ − 1|` accepted by [`UnitVector::new`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// A finite, non-empty vector of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("vector must have at least one entry".into()));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("vector has non-finite entries".into()));
        }
        Ok(Self(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &[f64]) -> Result<f64> {
        check_dims(self.dim(), other.len())?;
        Ok(dot(&self.0, other))
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|x| x * c).collect())
    }
}

/// A vector on the unit sphere, `|‖u‖ − 1| ≤ 1e−9`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Accepts entries that are already unit norm; does not rescale.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        let v = Vector::new(entries)?;
        let n = v.norm();
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidInput(alloc::format!("expected a unit vector, norm is {n}")));
        }
        Ok(Self(v.0))
    }

    /// Divides by the Euclidean norm.
    pub fn normalize(entries: &[f64]) -> Result<Self> {
        let n = norm(entries);
        if !n.is_finite() {
            return Err(Error::InvalidInput("vector has non-finite entries".into()));
        }
        if n == 0.0 {
            return Err(Error::ZeroActivation);
        }
        Ok(Self(entries.iter().map(|x| x / n).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// The antipodal point `−u`.
    pub fn antipode(&self) -> Self {
        Self(self.0.iter().map(|x| -x).collect())
    }
}

impl From<UnitVector> for Vector {
    fn from(u: UnitVector) -> Self {
        Vector(u.0)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("matrix must be at least 1x1".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::DimMismatch { expected: rows * cols, found: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Stacks equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dims(cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// Singular values, sorted non-increasing, all `≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum(Vec<f64>);

impl SingularSpectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("singular values must be finite and non-negative".into()));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("singular values must be non-increasing".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimMismatch { expected, found });
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Maximum number of Jacobi sweeps before giving up on convergence.
const MAX_SWEEPS: usize = 80;

/// All `min(rows, cols)` singular values via one-sided (Hestenes) Jacobi.
///
/// Rotations are orthogonal, so `Σσᵢ² = ‖A‖_F²` holds to rounding.
pub fn singular_values(matrix: &Matrix) -> Result<SingularSpectrum> {
    if matrix.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    // Orthogonalise the `n` columns of an `m × n` operand with m ≥ n.
    let (m, n) = if matrix.rows >= matrix.cols { (matrix.rows, matrix.cols) } else { (matrix.cols, matrix.rows) };
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| if matrix.rows >= matrix.cols { matrix.get(i, j) } else { matrix.get(j, i) }).collect())
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (a, b) = (&cols[p], &cols[q]);
                    (dot(a, a), dot(b, b), dot(a, b))
                };
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                let (a, b) = (&mut left[p], &mut right[0]);
                for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut values: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    SingularSpectrum::new(values)
}

/// Entropy effective rank `exp(−Σ pᵢ ln pᵢ)` with `pᵢ = σᵢ / Σσⱼ` over the
/// strictly positive values. Lies in `[1, #positive]`.
pub fn effective_rank(spectrum: &SingularSpectrum) -> Result<f64> {
    let positive: Vec<f64> = spectrum.0.iter().copied().filter(|s| *s > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::DegenerateSpectrum);
    }
    let total: f64 = positive.iter().sum();
    let mut entropy = CompensatedSum::default();
    for s in &positive {
        let p = s / total;
        if p > 0.0 {
            entropy.add(-p * libm::log(p));
        }
    }
    let r = libm::exp(entropy.value());
    Ok(r.clamp(1.0, positive.len() as f64))
}

/// RMSNorm over a slice: `out_i = gain_i · v_i / sqrt(mean(v²) + eps)`.
pub fn rms_normalize_slice(v: &[f64], gain: &[f64], eps: f64, out: &mut [f64]) {
    let ms = dot(v, v) / v.len() as f64;
    let inv = 1.0 / libm::sqrt(ms + eps);
    for ((o, x), g) in out.iter_mut().zip(v).zip(gain) {
        *o = g * x * inv;
    }
}

/// RMSNorm. `eps` may be zero as long as `v` is not the zero vector.
pub fn rms_normalize(v: &Vector, gain: &Vector, eps: f64) -> Result<Vector> {
    check_dims(v.dim(), gain.dim())?;
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::InvalidInput("rms eps must be finite and non-negative".into()));
    }
    if eps == 0.0 && v.as_slice().iter().all(|x| *x == 0.0) {
        return Err(Error::ZeroActivation);
    }
    let mut out = vec![0.0; v.dim()];
    rms_normalize_slice(v.as_slice(), gain.as_slice(), eps, &mut out);
    Vector::new(out)
}

/// `arccos` with its argument clamped to `[−1, 1]`, so it is total under
/// rounding drift of unit-vector dot products.
pub fn clamped_acos(cosine: f64) -> f64 {
    libm::acos(cosine.clamp(-1.0, 1.0))
}

/// Angle between two unit vectors, in `[0, π]`.
pub fn unit_angle(a: &UnitVector, b: &UnitVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let theta = clamped_acos(dot(a.as_slice(), b.as_slice()));
    debug_assert!((0.0..=PI).contains(&theta));
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spectrum(m: &Matrix) -> Vec<f64> {
        singular_values(m).unwrap().values().to_vec()
    }

    #[test]
    fn identity_has_unit_singular_values() {
        assert_eq!(spectrum(&Matrix::identity(3)), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_values_come_back_sorted() {
        let m = Matrix::new(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        assert_eq!(spectrum(&m), vec![3.0, 2.0]);
    }

    #[test]
    fn wide_matrix_is_transposed() {
        let m = Matrix::new(1, 3, vec![3.0, 0.0, 4.0]).unwrap();
        let s = spectrum(&m);
        assert_eq!(s.len(), 1);
        assert!((s[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_matrix_rejected() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn effective_rank_examples() {
        let flat = SingularSpectrum::new(vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((effective_rank(&flat).unwrap() - 3.0).abs() < 1e-12);
        let one = SingularSpectrum::new(vec![1.0]).unwrap();
        assert_eq!(effective_rank(&one).unwrap(), 1.0);
        // p = (1/2, 1/4, 1/4): H = 1.5 ln 2, exp(H) = 2^1.5.
        let skew = SingularSpectrum::new(vec![2.0, 1.0, 1.0]).unwrap();
        assert!((effective_rank(&skew).unwrap() - 2.828_427_124_746_19).abs() < 1e-12);
    }

    #[test]
    fn zero_spectrum_is_degenerate() {
        let z = SingularSpectrum::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(effective_rank(&z), Err(Error::DegenerateSpectrum));
    }

    #[test]
    fn unsorted_spectrum_rejected() {
        assert!(SingularSpectrum::new(vec![1.0, 2.0]).is_err());
        assert!(SingularSpectrum::new(vec![1.0, -0.5]).is_err());
    }

    #[test]
    fn rms_examples() {
        let ones = Vector::new(vec![1.0; 4]).unwrap();
        let out = rms_normalize(&ones, &ones, 1e-300).unwrap();
        assert!(out.as_slice().iter().all(|x| (x - 1.0).abs() < 1e-15));

        let v = Vector::new(vec![3.0, 4.0]).unwrap();
        let g = Vector::new(vec![1.0, 1.0]).unwrap();
        let out = rms_normalize(&v, &g, 0.0).unwrap();
        let rms = libm::sqrt(12.5);
        assert!((out.as_slice()[0] - 3.0 / rms).abs() < 1e-15);
        assert!((out.as_slice()[0] - 0.848_528_137_423_857).abs() < 1e-12);
        assert!((out.as_slice()[1] - 1.131_370_849_898_476).abs() < 1e-12);

        let z = Vector::zeros(3);
        let out = rms_normalize(&z, &Vector::new(vec![1.0; 3]).unwrap(), 1e-6).unwrap();
        assert!(out.as_slice().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rms_dim_mismatch() {
        let v = Vector::new(vec![1.0, 2.0]).unwrap();
        let g = Vector::new(vec![1.0]).unwrap();
        assert_eq!(rms_normalize(&v, &g, 1e-6), Err(Error::DimMismatch { expected: 2, found: 1 }));
    }

    #[test]
    fn angle_examples() {
        let e1 = UnitVector::new(vec![1.0, 0.0]).unwrap();
        let e2 = UnitVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(unit_angle(&e1, &e1).unwrap(), 0.0);
        assert!((unit_angle(&e1, &e2).unwrap() - PI / 2.0).abs() < 1e-15);
        assert_eq!(clamped_acos(1.0 + 1e-16), 0.0);
        assert_eq!(clamped_acos(1.0 + 4.0 * f64::EPSILON), 0.0);
        assert_eq!(clamped_acos(-1.0 - 4.0 * f64::EPSILON), PI);
        let short = UnitVector::new(vec![1.0]).unwrap();
        assert!(matches!(unit_angle(&e1, &short), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn unit_vector_rejects_off_sphere() {
        assert!(UnitVector::new(vec![1.0, 1.0]).is_err());
        assert_eq!(UnitVector::normalize(&[0.0, 0.0]), Err(Error::ZeroActivation));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        for x in [1e16, 1.0, -1e16] {
            s.add(x);
        }
        assert_eq!(s.value(), 1.0);
    }
}
