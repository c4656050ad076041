//! Small dense helpers shared by the filter modules.

use nalgebra::{DMatrix, SMatrix};

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The series stops early once a term vanishes, which makes nilpotent inputs
/// (such as the error dynamics of the filter) exact and cheap.
pub fn expm<const N: usize>(a: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    const MAX_TERMS: usize = 20;
    let norm = one_norm(a);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(squarings);

    let mut term = SMatrix::<f64, N, N>::identity();
    let mut sum = term;
    for k in 1..=MAX_TERMS {
        term = term * scaled / k as f64;
        let size = term.amax();
        sum += term;
        if size == 0.0 || size < 1e-18 * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

fn one_norm<const N: usize>(a: &SMatrix<f64, N, N>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalue extremes of a symmetric matrix, `(min, max)`.
pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub fn min_eigenvalue<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    eigen_range(&DMatrix::from_column_slice(N, N, m.as_slice())).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Matrix3};

    #[test]
    fn expm_of_rotation_generator() {
        let t = 2.5;
        let a = Matrix2::new(0.0, -t, t, 0.0);
        let e = expm(&a);
        let expected = Matrix2::new(t.cos(), -t.sin(), t.sin(), t.cos());
        assert!((e - expected).amax() < 1e-13);
    }

    #[test]
    fn expm_of_nilpotent_is_finite_series() {
        let a = Matrix3::new(0.0, 2.0, 3.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0);
        let expected = Matrix3::identity() + a + a * a * 0.5;
        assert!((expm(&a) - expected).amax() < 1e-12);
    }

    #[test]
    fn expm_of_diagonal() {
        let a = Matrix3::from_diagonal(&nalgebra::Vector3::new(-3.0, 0.1, 5.0));
        let e = expm(&a);
        for (i, x) in [-3.0f64, 0.1, 5.0].iter().enumerate() {
            assert!((e[(i, i)] - x.exp()).abs() < 1e-12 * x.exp().max(1.0));
        }
    }
}
