//! Dense linear algebra and exact optimal transport.

mod matrix;
mod svd;
mod transport;

pub use matrix::{dot, norm, Matrix};
pub use svd::{svd, SvdResult, MAX_SWEEPS, OFF_DIAGONAL_TOL};
pub use transport::{hungarian, solve_transport, TransportPlan, MARGINAL_TOL};

/// Sum of squared entries.
pub fn frobenius_sq(a: &Matrix) -> f64 {
    a.frobenius_sq()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_sq(&Matrix::identity(3)), 3.0);
        assert_eq!(frobenius_sq(&Matrix::from_rows(&[[3.0, 4.0]]).unwrap()), 25.0);
    }
}
