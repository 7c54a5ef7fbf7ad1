use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::expm::matrix_exponential;
use crate::error::{dim, domain, Result};

/// `e^{A s} x_start + (int_0^s e^{A b} db) * input_map * u_held`.
///
/// Uses the exponential of the augmented matrix `[[A, input_map u], [0, 0]] s`,
/// so a singular `A` needs no inversion.
pub fn propagate_segment(
    a: &DMatrix<f64>,
    x_start: &DVector<f64>,
    input_map: &DMatrix<f64>,
    u_held: &DVector<f64>,
    s: f64,
) -> Result<DVector<f64>> {
    if !(s >= 0.0) {
        return Err(domain(format!("propagation duration must be >= 0, got {s}")));
    }
    let n = a.nrows();
    if x_start.len() != n || input_map.nrows() != n || input_map.ncols() != u_held.len() {
        return Err(dim("propagate_segment operands have inconsistent sizes"));
    }
    if s == 0.0 {
        return Ok(x_start.clone());
    }
    let forcing = input_map * u_held;
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * s));
    aug.view_mut((0, n), (n, 1)).copy_from(&(forcing * s));
    let e = matrix_exponential(&aug)?;
    Ok(e.view((0, 0), (n, n)) * x_start + e.view((0, n), (n, 1)).column(0))
}

/// Transition pair for a held-input segment of fixed length `h`:
/// `transition = e^{A h}` and `held = int_0^h e^{A b} db`.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub transition: DMatrix<f64>,
    pub held: DMatrix<f64>,
}

impl Propagator {
    pub fn new(a: &DMatrix<f64>, h: f64) -> Result<Self> {
        if !(h >= 0.0) {
            return Err(domain(format!("segment length must be >= 0, got {h}")));
        }
        let n = a.nrows();
        if h == 0.0 {
            return Ok(Self {
                transition: DMatrix::identity(n, n),
                held: DMatrix::zeros(n, n),
            });
        }
        let mut aug = DMatrix::zeros(2 * n, 2 * n);
        aug.view_mut((0, 0), (n, n)).copy_from(&(a * h));
        aug.view_mut((0, n), (n, n))
            .copy_from(&(DMatrix::<f64>::identity(n, n) * h));
        let e = matrix_exponential(&aug)?;
        Ok(Self {
            transition: e.view((0, 0), (n, n)).into_owned(),
            held: e.view((0, n), (n, n)).into_owned(),
        })
    }

    /// State after the segment, starting from `x` with constant forcing `f`
    /// (already mapped into state space).
    pub fn apply(&self, x: &DVector<f64>, forcing: &DVector<f64>) -> DVector<f64> {
        &self.transition * x + &self.held * forcing
    }

    /// In-place variant of [`apply`](Self::apply) writing into `out`.
    pub fn apply_into(&self, x: &DVector<f64>, forcing: Option<&DVector<f64>>, out: &mut DVector<f64>) {
        out.gemv(1.0, &self.transition, x, 0.0);
        if let Some(f) = forcing {
            out.gemv(1.0, &self.held, f, 1.0);
        }
    }
}

/// Propagators keyed by exact segment length.
#[derive(Debug, Clone, Default)]
pub struct PropagatorCache {
    entries: HashMap<u64, Propagator>,
}

impl PropagatorCache {
    pub fn get_or_insert(&mut self, a: &DMatrix<f64>, h: f64) -> Result<&Propagator> {
        let key = h.to_bits();
        match self.entries.entry(key) {
            std::collections::hash_map::Entry::Occupied(e) => Ok(e.into_mut()),
            std::collections::hash_map::Entry::Vacant(e) => Ok(e.insert(Propagator::new(a, h)?)),
        }
    }

    pub fn get(&self, h: f64) -> Option<&Propagator> {
        self.entries.get(&h.to_bits())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
