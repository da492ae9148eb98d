use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Outcome of a nearest-PSD projection.
#[derive(Debug, Clone)]
pub struct PsdRepair {
    pub matrix: DMatrix<f64>,
    /// True when any eigenvalue was clipped.
    pub clipped: bool,
    /// True when a zero (or negative) diagonal made the rescale impossible
    /// for some coordinate; those rows keep their clipped values.
    pub degenerate_diagonal: bool,
}

/// Eigenvalue clipping at zero, re-symmetrization, and a diagonal rescale
/// back to the input's diagonal. Idempotent on PSD inputs.
pub fn nearest_psd(m: &DMatrix<f64>) -> Result<PsdRepair> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension { expected: n, got: m.ncols() });
    }
    let max_asym = (m - m.transpose()).abs().max();
    if max_asym > 1e-9 * (1.0 + m.abs().max()) {
        return Err(Error::Data(format!("matrix is not symmetric (max asymmetry {max_asym})")));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let clipped = eig.eigenvalues.iter().any(|&l| l < 0.0);
    if !clipped {
        return Ok(PsdRepair { matrix: sym, clipped: false, degenerate_diagonal: false });
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let mut rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;

    // pull the diagonal back to the original where that is meaningful
    let mut scale = vec![1.0; n];
    let mut degenerate = false;
    for i in 0..n {
        let orig = sym[(i, i)];
        let now = rebuilt[(i, i)];
        if orig > 0.0 && now > 0.0 {
            scale[i] = (orig / now).sqrt();
        } else {
            degenerate = true;
        }
    }
    for i in 0..n {
        for j in 0..n {
            rebuilt[(i, j)] *= scale[i] * scale[j];
        }
    }
    Ok(PsdRepair { matrix: rebuilt, clipped: true, degenerate_diagonal: degenerate })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psd_input_is_returned_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let psd = &a * a.transpose();
        let rep = nearest_psd(&psd).unwrap();
        assert!(!rep.clipped);
        assert!((rep.matrix - psd).abs().max() < 1e-12);
    }

    #[test]
    fn indefinite_diagonal_is_clipped_and_flagged() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[1.0, -1.0]));
        let rep = nearest_psd(&m).unwrap();
        assert!(rep.clipped);
        assert!(rep.degenerate_diagonal);
        assert!((rep.matrix[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(rep.matrix[(1, 1)].abs() < 1e-12);
    }

    #[test]
    fn random_symmetric_inputs_become_near_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let sym = (&a + a.transpose()) * 0.5;
            let rep = nearest_psd(&sym).unwrap();
            assert!(min_eigenvalue(&rep.matrix) >= -1e-8);
        }
    }

    #[test]
    fn repair_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let sym = (&a + a.transpose()) * 0.5;
        let once = nearest_psd(&sym).unwrap();
        let twice = nearest_psd(&once.matrix).unwrap();
        assert!((once.matrix - &twice.matrix).abs().max() < 1e-10);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = 1.0;
        assert!(nearest_psd(&m).is_err());
    }
}
