//! Fundamental matrix of the linear SDE `dU = A U dt + Σ B_i U dW_i`.
//!
//! Under the zero-commutator conditions the flow over a step is
//!
//! ```text
//! Φ(dt, dW) = exp( (A - ½ Σ B_i²) dt + Σ B_i dW_i )
//! ```
//!
//! Diagonal inputs take an elementwise fast path; everything else goes
//! through [`matrix_exp`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdeError};

/// Either a diagonal or a dense realisation of `Φ`.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowRepr {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

/// One realisation of the fundamental matrix over a step.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    pub repr: FlowRepr,
    pub dt: f64,
    pub dw: Vec<f64>,
}

impl FlowMatrix {
    pub fn dim(&self) -> usize {
        match &self.repr {
            FlowRepr::Diagonal(v) => v.len(),
            FlowRepr::Dense(m) => m.nrows(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            FlowRepr::Diagonal(diag) => diag.component_mul(v),
            FlowRepr::Dense(m) => m * v,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            FlowRepr::Diagonal(diag) => DMatrix::from_diagonal(diag),
            FlowRepr::Dense(m) => m.clone(),
        }
    }

    /// Matrix product `self · other` (both over the same dimension).
    pub fn compose(&self, other: &FlowMatrix) -> FlowMatrix {
        let repr = match (&self.repr, &other.repr) {
            (FlowRepr::Diagonal(a), FlowRepr::Diagonal(b)) => FlowRepr::Diagonal(a.component_mul(b)),
            _ => FlowRepr::Dense(self.to_dense() * other.to_dense()),
        };
        let dw = self.dw.iter().zip(&other.dw).map(|(a, b)| a + b).collect();
        FlowMatrix {
            repr,
            dt: self.dt + other.dt,
            dw,
        }
    }
}

/// Precomputed linear part of a model: the step-invariant drift exponent
/// `A - ½ΣB_i²` and the diffusion matrices.
#[derive(Debug, Clone)]
pub struct LinearFlow {
    drift_exponent: DMatrix<f64>,
    diffusion: Vec<DMatrix<f64>>,
    diagonal: Option<(DVector<f64>, Vec<DVector<f64>>)>,
}

impl LinearFlow {
    pub fn new(a: &DMatrix<f64>, b: &[DMatrix<f64>]) -> Result<Self> {
        let d = a.nrows();
        if a.ncols() != d {
            return Err(SdeError::dimension("A", format!("{d}x{d}"), format!("{}x{}", d, a.ncols())));
        }
        for (i, bi) in b.iter().enumerate() {
            if bi.shape() != (d, d) {
                return Err(SdeError::dimension(
                    format!("B[{i}]"),
                    format!("{d}x{d}"),
                    format!("{}x{}", bi.nrows(), bi.ncols()),
                ));
            }
        }
        if a.iter().chain(b.iter().flat_map(|m| m.iter())).any(|x| !x.is_finite()) {
            return Err(SdeError::NonFinite("flow matrix"));
        }

        let mut drift_exponent = a.clone();
        for bi in b {
            drift_exponent -= 0.5 * (bi * bi);
        }

        let diagonal = if is_diagonal(a) && b.iter().all(is_diagonal) {
            Some((
                drift_exponent.diagonal(),
                b.iter().map(|m| m.diagonal()).collect(),
            ))
        } else {
            None
        };

        Ok(LinearFlow {
            drift_exponent,
            diffusion: b.to_vec(),
            diagonal,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift_exponent.nrows()
    }

    pub fn drivers(&self) -> usize {
        self.diffusion.len()
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal.is_some()
    }

    /// `A - ½ΣB_i²`.
    pub fn drift_exponent(&self) -> &DMatrix<f64> {
        &self.drift_exponent
    }

    fn exponent(&self, dt: f64, dw: &[f64], sign: f64) -> FlowRepr {
        match &self.diagonal {
            Some((drift, diffusion)) => {
                let mut e = drift * dt;
                for (bi, w) in diffusion.iter().zip(dw) {
                    e.axpy(*w, bi, 1.0);
                }
                FlowRepr::Diagonal(e.map(|x| (sign * x).exp()))
            }
            None => {
                let mut e = &self.drift_exponent * dt;
                for (bi, w) in self.diffusion.iter().zip(dw) {
                    e += bi * *w;
                }
                e *= sign;
                FlowRepr::Dense(expm_unchecked(&e))
            }
        }
    }

    fn check_step(&self, dt: f64, dw: &[f64]) -> Result<()> {
        if dw.len() != self.drivers() {
            return Err(SdeError::dimension("dW", self.drivers(), dw.len()));
        }
        if !dt.is_finite() || dw.iter().any(|w| !w.is_finite()) {
            return Err(SdeError::NonFinite("flow matrix"));
        }
        if dt < 0.0 {
            return Err(SdeError::Config(format!("flow step must be nonnegative, got {dt}")));
        }
        Ok(())
    }

    pub fn flow(&self, dt: f64, dw: &[f64]) -> Result<FlowMatrix> {
        self.check_step(dt, dw)?;
        Ok(FlowMatrix {
            repr: self.exponent(dt, dw, 1.0),
            dt,
            dw: dw.to_vec(),
        })
    }

    pub fn inverse(&self, dt: f64, dw: &[f64]) -> Result<FlowMatrix> {
        self.check_step(dt, dw)?;
        Ok(FlowMatrix {
            repr: self.exponent(dt, dw, -1.0),
            dt,
            dw: dw.to_vec(),
        })
    }

    /// Applies `Φ(dt, dW)` to `v` without materialising a dense diagonal.
    /// Inputs are assumed already validated; used on the hot path.
    pub(crate) fn apply(&self, dt: f64, dw: &[f64], v: &DVector<f64>) -> DVector<f64> {
        match &self.diagonal {
            Some((drift, diffusion)) => DVector::from_fn(v.len(), |k, _| {
                let mut e = drift[k] * dt;
                for (bi, w) in diffusion.iter().zip(dw) {
                    e += bi[k] * w;
                }
                e.exp() * v[k]
            }),
            None => match self.exponent(dt, dw, 1.0) {
                FlowRepr::Dense(m) => m * v,
                FlowRepr::Diagonal(diag) => diag.component_mul(v),
            },
        }
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && m.iter()
            .enumerate()
            .all(|(idx, x)| idx % m.nrows() == idx / m.nrows() || *x == 0.0)
}

/// `exp((A - ½ΣB_i²) dt + Σ B_i dW_i)`.
pub fn flow_matrix(a: &DMatrix<f64>, b: &[DMatrix<f64>], dt: f64, dw: &[f64]) -> Result<FlowMatrix> {
    LinearFlow::new(a, b)?.flow(dt, dw)
}

/// Exponential of the negated flow exponent, i.e. `Φ(dt, dW)^{-1}`.
pub fn inverse_flow_matrix(
    a: &DMatrix<f64>,
    b: &[DMatrix<f64>],
    dt: f64,
    dw: &[f64],
) -> Result<FlowMatrix> {
    LinearFlow::new(a, b)?.inverse(dt, dw)
}

// Numerator coefficients of the [13/13] Padé approximant to exp.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norm for which the degree-13 approximant needs no scaling.
const THETA_13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant. Diagonal inputs are exponentiated elementwise.
pub fn matrix_exp(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(SdeError::dimension(
            "matrix_exp input",
            "square",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(SdeError::NonFinite("matrix_exp"));
    }
    Ok(expm_unchecked(m))
}

fn expm_unchecked(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if is_diagonal(m) {
        return DMatrix::from_diagonal(&m.diagonal().map(f64::exp));
    }

    let norm1 = m
        .column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > THETA_13 {
        (norm1 / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-squarings);

    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let p = &v + &u;
    let q = &v - &u;
    // q is the Padé denominator, nonsingular within the θ13 bound.
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular for scaled input");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}
