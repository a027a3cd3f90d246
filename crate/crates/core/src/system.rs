//! Uncertain linear time-varying systems
//! `x(k+1) = A(k,θ) x(k) + B(k,θ) u(k) + w(k)`, `y(k) = C(k,θ) x(k) + v(k)`
//! with `w(k) ∈ E(0, Pw(k))` and `v(k) ∈ E(0, Pv(k))`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Matrix generator depending on the step and a parameter vector.
pub type ParamMatrixFn = Arc<dyn Fn(usize, &[f64]) -> DMatrix<f64> + Send + Sync>;
/// Matrix generator depending on the step only.
pub type MatrixFn = Arc<dyn Fn(usize) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub struct UncertainSystem {
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    a: ParamMatrixFn,
    b: ParamMatrixFn,
    c: ParamMatrixFn,
    process_noise: MatrixFn,
    output_noise: MatrixFn,
}

impl fmt::Debug for UncertainSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UncertainSystem")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .finish_non_exhaustive()
    }
}

fn expect_shape(what: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn expect_shape_matrix(what: &str, m: &DMatrix<f64>, dim: usize) -> Result<()> {
    expect_shape(what, m, dim, dim)?;
    if linalg::asymmetry(m) > crate::ellipsoid::SYMMETRY_TOL {
        return Err(Error::Input(format!("{what} is not symmetric")));
    }
    let scale = m.amax().max(1.0);
    if linalg::min_eigenvalue(m) < -crate::ellipsoid::PSD_TOL * scale {
        return Err(Error::Input(format!("{what} is not positive semidefinite")));
    }
    Ok(())
}

impl UncertainSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        a: ParamMatrixFn,
        b: ParamMatrixFn,
        c: ParamMatrixFn,
        process_noise: MatrixFn,
        output_noise: MatrixFn,
    ) -> Result<Self> {
        if state_dim == 0 || input_dim == 0 || output_dim == 0 {
            return Err(Error::Input("system dimensions must be positive".into()));
        }
        if output_dim > state_dim {
            return Err(Error::Input(format!(
                "output dimension {output_dim} exceeds state dimension {state_dim}"
            )));
        }
        Ok(Self { state_dim, input_dim, output_dim, a, b, c, process_noise, output_noise })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn a(&self, k: usize, theta: &[f64]) -> Result<DMatrix<f64>> {
        let m = (self.a)(k, theta);
        expect_shape(&format!("A({k})"), &m, self.state_dim, self.state_dim)?;
        Ok(m)
    }

    pub fn b(&self, k: usize, theta: &[f64]) -> Result<DMatrix<f64>> {
        let m = (self.b)(k, theta);
        expect_shape(&format!("B({k})"), &m, self.state_dim, self.input_dim)?;
        Ok(m)
    }

    pub fn c(&self, k: usize, theta: &[f64]) -> Result<DMatrix<f64>> {
        let m = (self.c)(k, theta);
        expect_shape(&format!("C({k})"), &m, self.output_dim, self.state_dim)?;
        Ok(m)
    }

    pub fn process_noise(&self, k: usize) -> Result<DMatrix<f64>> {
        let m = (self.process_noise)(k);
        expect_shape_matrix(&format!("Pw({k})"), &m, self.state_dim)?;
        Ok(linalg::symmetrize(&m))
    }

    pub fn output_noise(&self, k: usize) -> Result<DMatrix<f64>> {
        let m = (self.output_noise)(k);
        expect_shape_matrix(&format!("Pv({k})"), &m, self.output_dim)?;
        Ok(linalg::symmetrize(&m))
    }
}

/// Wrap a closure as a [`ParamMatrixFn`].
pub fn param_fn<F>(f: F) -> ParamMatrixFn
where
    F: Fn(usize, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
{
    Arc::new(f)
}

/// Wrap a closure as a [`MatrixFn`].
pub fn matrix_fn<F>(f: F) -> MatrixFn
where
    F: Fn(usize) -> DMatrix<f64> + Send + Sync + 'static,
{
    Arc::new(f)
}

/// Constant generator.
pub fn constant(m: DMatrix<f64>) -> MatrixFn {
    Arc::new(move |_| m.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_system(c: f64) -> Result<UncertainSystem> {
        UncertainSystem::new(
            1,
            1,
            1,
            param_fn(|_, th| DMatrix::from_element(1, 1, th[0])),
            param_fn(|_, _| DMatrix::from_element(1, 1, 1.0)),
            param_fn(move |_, _| DMatrix::from_element(1, 1, c)),
            constant(DMatrix::from_element(1, 1, 0.1)),
            matrix_fn(|k| DMatrix::from_element(1, 1, k as f64 - 1.0)),
        )
    }

    #[test]
    fn evaluates_and_checks_generators() {
        let sys = scalar_system(1.0).unwrap();
        assert_eq!(sys.a(3, &[0.5]).unwrap()[(0, 0)], 0.5);
        assert!(sys.output_noise(2).is_ok());
        assert!(sys.output_noise(0).is_err());
    }

    #[test]
    fn rejects_wide_outputs() {
        let r = UncertainSystem::new(
            1,
            1,
            2,
            param_fn(|_, _| DMatrix::identity(1, 1)),
            param_fn(|_, _| DMatrix::identity(1, 1)),
            param_fn(|_, _| DMatrix::zeros(2, 1)),
            constant(DMatrix::identity(1, 1)),
            constant(DMatrix::identity(2, 2)),
        );
        assert!(r.is_err());
    }
}
