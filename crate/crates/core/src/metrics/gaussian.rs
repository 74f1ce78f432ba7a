use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{KclError, Result};

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(KclError::invalid(what, "covariance must be square"));
    }
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if (m - m.transpose()).iter().any(|v| v.abs() > 1e-12 * scale) {
        return Err(KclError::invalid(what, "covariance must be symmetric"));
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
        return Err(KclError::invalid(
            what,
            "covariance is not positive semidefinite",
        ));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// `W₂` between `N(m_a, Σ_a)` and `N(m_b, Σ_b)` via the Bures formula
/// `|m_a − m_b|² + tr(Σ_a + Σ_b − 2 (Σ_b^{1/2} Σ_a Σ_b^{1/2})^{1/2})`.
pub fn w2_gaussian(
    mean_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mean_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let n = mean_a.len();
    if mean_b.len() != n || cov_a.nrows() != n || cov_b.nrows() != n {
        return Err(KclError::Dimension {
            expected: n,
            got: mean_b.len().max(cov_a.nrows()).max(cov_b.nrows()),
        });
    }
    psd_sqrt(cov_a, "cov_a")?;
    let sb = psd_sqrt(cov_b, "cov_b")?;
    let cross = psd_sqrt(
        &{
            let m = &sb * cov_a * &sb;
            (&m + m.transpose()) * 0.5
        },
        "cross term",
    )?;
    let bures = (cov_a + cov_b - cross * 2.0).trace();
    let d2 = (mean_a - mean_b).norm_squared() + bures;
    Ok(d2.max(0.0).sqrt())
}
