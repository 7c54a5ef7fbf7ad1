use nalgebra::{DMatrix, DVector};

use crate::error::{dim, domain, Result};

/// Constrained LTI plant `x' = A x + B u + sum_i E_i w_i`, `x(0) = x0`,
/// with the feasible set `{x | C x <= d}` and nominal input `u0`.
///
/// `load_maps` holds the load-input matrices; each demand selects one of them
/// by index.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    load_maps: Vec<DMatrix<f64>>,
    c: DMatrix<f64>,
    d: DVector<f64>,
    x0: DVector<f64>,
    u0: DVector<f64>,
}

impl StateSpaceModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        load_maps: Vec<DMatrix<f64>>,
        c: DMatrix<f64>,
        d: DVector<f64>,
        x0: DVector<f64>,
        u0: DVector<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(dim(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(dim(format!("B has {} rows, expected {n}", b.nrows())));
        }
        for (i, e) in load_maps.iter().enumerate() {
            if e.nrows() != n {
                return Err(dim(format!("E[{i}] has {} rows, expected {n}", e.nrows())));
            }
        }
        if c.ncols() != n {
            return Err(dim(format!("C has {} columns, expected {n}", c.ncols())));
        }
        if d.len() != c.nrows() {
            return Err(dim(format!("d has length {}, expected {}", d.len(), c.nrows())));
        }
        if x0.len() != n {
            return Err(dim(format!("x0 has length {}, expected {n}", x0.len())));
        }
        if u0.len() != b.ncols() {
            return Err(dim(format!("u0 has length {}, expected {}", u0.len(), b.ncols())));
        }
        let all_finite = a.iter().chain(b.iter()).chain(c.iter()).chain(d.iter())
            .chain(x0.iter())
            .chain(u0.iter())
            .chain(load_maps.iter().flat_map(|e| e.iter()))
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(domain("model data must be finite"));
        }
        Ok(Self {
            a,
            b,
            load_maps,
            c,
            d,
            x0,
            u0,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn load_maps(&self) -> &[DMatrix<f64>] {
        &self.load_maps
    }
    pub fn load_map(&self, channel: usize) -> Option<&DMatrix<f64>> {
        self.load_maps.get(channel)
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }
    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }
    pub fn u0(&self) -> &DVector<f64> {
        &self.u0
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn constraints(&self) -> usize {
        self.c.nrows()
    }

    /// Largest `C_z x0 - d_z`; non-positive iff the initial state is feasible.
    pub fn initial_violation(&self) -> f64 {
        (&self.c * &self.x0 - &self.d)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy with a different constraint offset vector.
    pub fn with_offsets(&self, d: DVector<f64>) -> Result<Self> {
        if d.len() != self.d.len() {
            return Err(dim("constraint offsets length changed"));
        }
        let mut out = self.clone();
        out.d = d;
        Ok(out)
    }
}
