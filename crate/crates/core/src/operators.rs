//! Computational-basis operators and the chain Hamiltonians.
//!
//! Basis convention: site 1 is the leftmost (most significant) tensor factor,
//! and bit value 0 is spin up (`σ^z = +1`). Site `k` of an `L`-site chain
//! therefore lives on bit `L - k` of the basis index.

use std::fmt;

use faer::{c64, Mat, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dense dimension built unless the caller raises the cap.
pub const DEFAULT_DIM_CAP: usize = 1 << 14;

/// Entrywise tolerance for Hermiticity.
pub const HERMITICITY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Whether a site operator is the bare Pauli matrix or the spin-1/2 `S = σ/2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpinConvention {
    Pauli,
    Half,
}

impl SpinConvention {
    fn scale(self) -> f64 {
        match self {
            SpinConvention::Pauli => 1.0,
            SpinConvention::Half => 0.5,
        }
    }
}

/// Bit mask of 1-based `site` in an `length`-site chain.
#[inline]
pub fn site_mask(site: usize, length: usize) -> usize {
    1 << (length - site)
}

/// A real multiple of a Pauli string, stored as bit masks.
///
/// On a basis state `|b⟩` the string acts as
/// `i^{#Y} (-1)^{popcount(b & (Y|Z))} |b ⊕ (X|Y)⟩`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PauliTerm {
    pub coefficient: f64,
    x_mask: usize,
    y_mask: usize,
    z_mask: usize,
}

impl PauliTerm {
    /// Builds `coefficient · Π σ^{axis}_{site}`; sites are 1-based and distinct.
    pub fn new(coefficient: f64, factors: &[(usize, Axis)], length: usize) -> Self {
        let mut term = PauliTerm {
            coefficient,
            x_mask: 0,
            y_mask: 0,
            z_mask: 0,
        };
        for &(site, axis) in factors {
            let m = site_mask(site, length);
            debug_assert_eq!((term.x_mask | term.y_mask | term.z_mask) & m, 0);
            match axis {
                Axis::X => term.x_mask |= m,
                Axis::Y => term.y_mask |= m,
                Axis::Z => term.z_mask |= m,
            }
        }
        term
    }

    /// Image of basis state `b`: `(b', amplitude)`.
    #[inline]
    pub fn apply(&self, b: usize) -> (usize, c64) {
        let target = b ^ (self.x_mask | self.y_mask);
        let sign = if (b & (self.y_mask | self.z_mask)).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        let c = self.coefficient * sign;
        let amp = match self.y_mask.count_ones() % 4 {
            0 => c64::new(c, 0.0),
            1 => c64::new(0.0, c),
            2 => c64::new(-c, 0.0),
            _ => c64::new(0.0, -c),
        };
        (target, amp)
    }

    /// True when the string acts only on the sites in `mask`.
    fn within(&self, mask: usize) -> bool {
        (self.x_mask | self.y_mask | self.z_mask) & !mask == 0
    }
}

/// The four chain families with their parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    /// `Σ (h_x σ^x_k + h_z σ^z_k) − Σ J_k σ^z_k σ^z_{k+1}` in Pauli units.
    IsingLongTrans {
        h_x: f64,
        h_z: f64,
        couplings: Vec<f64>,
        /// When set, `resample` redraws the couplings uniformly in this range.
        #[serde(default)]
        coupling_range: Option<[f64; 2]>,
    },
    /// `B Σ (sin θ S^x_k + cos θ S^z_k) + J Σ S^z_k S^z_{k+1}`.
    TiltedIsing { field: f64, theta: f64, coupling: f64 },
    /// `Σ S_k · S_{k+1} + Σ h_k S^z_k` with `h_k` uniform in `[-h, h]`.
    HeisenbergRandomField { field_bound: f64, fields: Vec<f64> },
    /// XXZ with anisotropy `μ` plus `λ` times the same coupling at next-nearest range.
    PerturbedXxz { anisotropy: f64, perturbation: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    IsingLongTrans,
    TiltedIsing,
    HeisenbergRandomField,
    PerturbedXxz,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::IsingLongTrans => "ising_long_trans",
            ModelKind::TiltedIsing => "tilted_ising",
            ModelKind::HeisenbergRandomField => "heisenberg_random_field",
            ModelKind::PerturbedXxz => "perturbed_xxz",
        };
        f.write_str(s)
    }
}

/// One concrete chain Hamiltonian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinModel {
    pub length: usize,
    #[serde(flatten)]
    pub params: ModelParams,
    /// When false, single-site terms acting only on the probe (site 1) are dropped.
    #[serde(default = "default_true")]
    pub include_probe_hamiltonian: bool,
}

fn default_true() -> bool {
    true
}

impl SpinModel {
    pub fn ising(length: usize, h_x: f64, h_z: f64, couplings: Vec<f64>) -> Result<Self> {
        let model = SpinModel {
            length,
            params: ModelParams::IsingLongTrans {
                h_x,
                h_z,
                couplings,
                coupling_range: None,
            },
            include_probe_hamiltonian: true,
        };
        model.validate()?;
        Ok(model)
    }

    /// Ising chain with every coupling equal to `coupling`.
    pub fn ising_uniform(length: usize, h_x: f64, h_z: f64, coupling: f64) -> Result<Self> {
        Self::ising(length, h_x, h_z, vec![coupling; length.saturating_sub(1)])
    }

    pub fn tilted_ising(length: usize, field: f64, theta: f64, coupling: f64) -> Result<Self> {
        let model = SpinModel {
            length,
            params: ModelParams::TiltedIsing {
                field,
                theta,
                coupling,
            },
            include_probe_hamiltonian: true,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn heisenberg(field_bound: f64, fields: Vec<f64>) -> Result<Self> {
        let model = SpinModel {
            length: fields.len(),
            params: ModelParams::HeisenbergRandomField {
                field_bound,
                fields,
            },
            include_probe_hamiltonian: true,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn perturbed_xxz(length: usize, anisotropy: f64, perturbation: f64) -> Result<Self> {
        let model = SpinModel {
            length,
            params: ModelParams::PerturbedXxz {
                anisotropy,
                perturbation,
            },
            include_probe_hamiltonian: true,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_probe_hamiltonian(mut self, include: bool) -> Self {
        self.include_probe_hamiltonian = include;
        self
    }

    pub fn kind(&self) -> ModelKind {
        match self.params {
            ModelParams::IsingLongTrans { .. } => ModelKind::IsingLongTrans,
            ModelParams::TiltedIsing { .. } => ModelKind::TiltedIsing,
            ModelParams::HeisenbergRandomField { .. } => ModelKind::HeisenbergRandomField,
            ModelParams::PerturbedXxz { .. } => ModelKind::PerturbedXxz,
        }
    }

    pub fn dim(&self) -> usize {
        1usize << self.length
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.length;
        if l == 0 || l >= usize::BITS as usize - 1 {
            return Err(Error::argument(format!("chain length {l} is out of range")));
        }
        match &self.params {
            ModelParams::IsingLongTrans {
                couplings,
                coupling_range,
                ..
            } => {
                if couplings.len() != l - 1 {
                    return Err(Error::argument(format!(
                        "Ising chain of length {l} needs {} couplings, got {}",
                        l - 1,
                        couplings.len()
                    )));
                }
                if let Some([lo, hi]) = coupling_range {
                    if !(lo <= hi) {
                        return Err(Error::argument("coupling range needs lo <= hi"));
                    }
                }
            }
            ModelParams::HeisenbergRandomField {
                field_bound,
                fields,
            } => {
                if fields.len() != l {
                    return Err(Error::argument(format!(
                        "Heisenberg chain of length {l} needs {l} fields, got {}",
                        fields.len()
                    )));
                }
                if !(*field_bound >= 0.0) {
                    return Err(Error::argument("field bound must be nonnegative"));
                }
            }
            ModelParams::TiltedIsing { .. } | ModelParams::PerturbedXxz { .. } => {}
        }
        Ok(())
    }

    /// Whether the model carries quenched disorder redrawn per realization.
    pub fn is_stochastic(&self) -> bool {
        match &self.params {
            ModelParams::IsingLongTrans { coupling_range, .. } => coupling_range.is_some(),
            ModelParams::HeisenbergRandomField { .. } => true,
            _ => false,
        }
    }

    /// Draws a fresh disorder realization; deterministic models are cloned.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SpinModel> {
        let mut model = self.clone();
        match &mut model.params {
            ModelParams::IsingLongTrans {
                couplings,
                coupling_range: Some([lo, hi]),
                ..
            } => {
                *couplings = sample_random_couplings(self.length, *lo, *hi, rng)?;
            }
            ModelParams::HeisenbergRandomField {
                field_bound,
                fields,
            } => {
                *fields = sample_random_fields(self.length, *field_bound, rng)?;
            }
            _ => {}
        }
        Ok(model)
    }

    /// Whether the chain-reversal permutation is a symmetry by construction.
    pub fn has_parity_symmetry(&self) -> bool {
        match &self.params {
            ModelParams::IsingLongTrans {
                couplings,
                coupling_range,
                ..
            } => {
                self.include_probe_hamiltonian
                    && coupling_range.is_none()
                    && couplings.iter().eq(couplings.iter().rev())
            }
            ModelParams::TiltedIsing { .. } => self.include_probe_hamiltonian,
            ModelParams::HeisenbergRandomField { fields, .. } => {
                fields.iter().eq(fields.iter().rev())
            }
            ModelParams::PerturbedXxz { .. } => true,
        }
    }

    /// Whether total `S^z` is conserved by construction.
    pub fn conserves_magnetization(&self) -> bool {
        match &self.params {
            ModelParams::IsingLongTrans { h_x, .. } => *h_x == 0.0,
            ModelParams::TiltedIsing { field, theta, .. } => *field == 0.0 || theta.sin() == 0.0,
            ModelParams::HeisenbergRandomField { .. } | ModelParams::PerturbedXxz { .. } => true,
        }
    }

    /// The same family restricted to sites `2..=L`, with the probe and its
    /// coupling removed.
    pub fn environment(&self) -> Result<SpinModel> {
        if self.length < 2 {
            return Err(Error::argument("the environment needs a chain of length >= 2"));
        }
        let mut env = self.clone();
        env.length = self.length - 1;
        env.include_probe_hamiltonian = true;
        match &mut env.params {
            ModelParams::IsingLongTrans { couplings, .. } => {
                couplings.remove(0);
            }
            ModelParams::HeisenbergRandomField { fields, .. } => {
                fields.remove(0);
            }
            _ => {}
        }
        Ok(env)
    }

    /// The Hamiltonian as a list of Pauli strings.
    pub fn terms(&self) -> Vec<PauliTerm> {
        use Axis::*;
        let l = self.length;
        let mut terms = Vec::new();
        let field = |terms: &mut Vec<PauliTerm>, coef: f64, site: usize, axis: Axis| {
            if coef != 0.0 && (site != 1 || self.include_probe_hamiltonian) {
                terms.push(PauliTerm::new(coef, &[(site, axis)], l));
            }
        };
        let pair = |terms: &mut Vec<PauliTerm>, coef: f64, a: usize, b: usize, axes: &[Axis]| {
            if coef != 0.0 {
                for &ax in axes {
                    terms.push(PauliTerm::new(coef, &[(a, ax), (b, ax)], l));
                }
            }
        };
        match &self.params {
            ModelParams::IsingLongTrans {
                h_x, h_z, couplings, ..
            } => {
                for k in 1..=l {
                    field(&mut terms, *h_x, k, X);
                    field(&mut terms, *h_z, k, Z);
                }
                for (k, j) in couplings.iter().enumerate() {
                    pair(&mut terms, -j, k + 1, k + 2, &[Z]);
                }
            }
            ModelParams::TiltedIsing {
                field: b,
                theta,
                coupling,
            } => {
                // S = σ/2: single-site terms pick up 1/2, pairs 1/4.
                for k in 1..=l {
                    field(&mut terms, 0.5 * b * theta.sin(), k, X);
                    field(&mut terms, 0.5 * b * theta.cos(), k, Z);
                }
                for k in 1..l {
                    pair(&mut terms, 0.25 * coupling, k, k + 1, &[Z]);
                }
            }
            ModelParams::HeisenbergRandomField { fields, .. } => {
                for k in 1..l {
                    pair(&mut terms, 0.25, k, k + 1, &[X, Y, Z]);
                }
                for (k, h) in fields.iter().enumerate() {
                    field(&mut terms, 0.5 * h, k + 1, Z);
                }
            }
            ModelParams::PerturbedXxz {
                anisotropy,
                perturbation,
            } => {
                for k in 1..l {
                    pair(&mut terms, 0.25, k, k + 1, &[X, Y]);
                    pair(&mut terms, 0.25 * anisotropy, k, k + 1, &[Z]);
                }
                for k in 1..l.saturating_sub(1) {
                    pair(&mut terms, 0.25 * perturbation, k, k + 2, &[X, Y]);
                    pair(&mut terms, 0.25 * perturbation * anisotropy, k, k + 2, &[Z]);
                }
            }
        }
        terms
    }

    /// Sets a named scalar parameter (used by parameter sweeps).
    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<()> {
        let kind = self.kind();
        let unknown = || {
            Error::argument(format!(
                "parameter `{name}` does not exist for model {kind}"
            ))
        };
        match (&mut self.params, name) {
            (ModelParams::IsingLongTrans { h_x, .. }, "h_x") => *h_x = value,
            (ModelParams::IsingLongTrans { h_z, .. }, "h_z") => *h_z = value,
            (ModelParams::IsingLongTrans { couplings, .. }, "coupling") => {
                couplings.iter_mut().for_each(|j| *j = value)
            }
            (ModelParams::TiltedIsing { field, .. }, "field") => *field = value,
            (ModelParams::TiltedIsing { theta, .. }, "theta") => *theta = value,
            (ModelParams::TiltedIsing { coupling, .. }, "coupling") => *coupling = value,
            (ModelParams::HeisenbergRandomField { field_bound, .. }, "field_bound") => {
                if !(value >= 0.0) {
                    return Err(Error::argument("field bound must be nonnegative"));
                }
                *field_bound = value
            }
            (ModelParams::PerturbedXxz { anisotropy, .. }, "anisotropy") => *anisotropy = value,
            (ModelParams::PerturbedXxz { perturbation, .. }, "perturbation") => {
                *perturbation = value
            }
            _ => return Err(unknown()),
        }
        Ok(())
    }
}

/// Dense Hermitian matrix over a computational (or sector) basis.
#[derive(Clone, Debug)]
pub struct HermitianOperator {
    matrix: Mat<c64>,
}

impl HermitianOperator {
    /// Wraps `matrix` after checking it is square and Hermitian to 1e-12.
    pub fn new(matrix: Mat<c64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::argument(format!(
                "operator must be a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let residual = hermiticity_residual(matrix.as_ref());
        if residual > HERMITICITY_TOL {
            return Err(Error::argument(format!(
                "matrix is not Hermitian: max |A - A†| = {residual:.3e}"
            )));
        }
        Ok(HermitianOperator { matrix })
    }

    pub(crate) fn from_trusted(matrix: Mat<c64>) -> Self {
        debug_assert!(hermiticity_residual(matrix.as_ref()) <= 1e-10);
        HermitianOperator { matrix }
    }

    pub fn from_real_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(Mat::from_fn(dim, dim, |i, j| c64::new(f(i, j), 0.0)))
    }

    pub fn zeros(dim: usize) -> Self {
        HermitianOperator {
            matrix: Mat::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        HermitianOperator {
            matrix: Mat::identity(dim, dim),
        }
    }

    /// Assembles `Σ terms` densely.
    pub fn from_terms(terms: &[PauliTerm], length: usize, cap: usize) -> Result<Self> {
        let dim = checked_dim(length, cap)?;
        let mut matrix = Mat::<c64>::zeros(dim, dim);
        for term in terms {
            for b in 0..dim {
                let (t, amp) = term.apply(b);
                matrix[(t, b)] += amp;
            }
        }
        Ok(HermitianOperator { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> MatRef<'_, c64> {
        self.matrix.as_ref()
    }

    pub fn into_matrix(self) -> Mat<c64> {
        self.matrix
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> c64 {
        self.matrix[(row, col)]
    }

    /// True when every imaginary part is exactly zero.
    pub fn is_real(&self) -> bool {
        (0..self.dim()).all(|j| self.matrix.col_as_slice(j).iter().all(|z| z.im == 0.0))
    }

    pub fn hermiticity_residual(&self) -> f64 {
        hermiticity_residual(self.matrix.as_ref())
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.dim())
            .flat_map(|j| self.matrix.col_as_slice(j).iter().map(|z| z.norm()))
            .fold(0.0, f64::max)
    }

    /// `self + alpha · other`.
    pub fn add_scaled(&self, other: &HermitianOperator, alpha: f64) -> Result<Self> {
        if other.dim() != self.dim() {
            return Err(Error::argument("operator dimensions differ"));
        }
        let a = c64::new(alpha, 0.0);
        Ok(HermitianOperator {
            matrix: Mat::from_fn(self.dim(), self.dim(), |i, j| {
                self.matrix[(i, j)] + a * other.matrix[(i, j)]
            }),
        })
    }

    /// Plain matrix product (not Hermitian in general).
    pub fn matmul(&self, other: &HermitianOperator) -> Mat<c64> {
        &self.matrix * &other.matrix
    }

    /// Max-entry norm of `[self, other]`.
    pub fn commutator_norm(&self, other: &HermitianOperator) -> f64 {
        let ab = self.matmul(other);
        let ba = other.matmul(self);
        max_abs_diff(ab.as_ref(), ba.as_ref())
    }

    /// Max-entry norm of `{self, other}`.
    pub fn anticommutator_norm(&self, other: &HermitianOperator) -> f64 {
        let ab = self.matmul(other);
        let ba = other.matmul(self);
        let n = self.dim();
        let mut m = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                m = m.max((ab[(i, j)] + ba[(i, j)]).norm());
            }
        }
        m
    }

    /// `A v`.
    pub fn apply(&self, v: &[c64]) -> Vec<c64> {
        let n = self.dim();
        assert_eq!(v.len(), n, "vector length must match operator dimension");
        let mut out = vec![c64::new(0.0, 0.0); n];
        for (j, &vj) in v.iter().enumerate() {
            if vj == c64::new(0.0, 0.0) {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.matrix.col_as_slice(j)) {
                *o += a * vj;
            }
        }
        out
    }

    /// `⟨v|A|v⟩` (real part).
    pub fn expectation(&self, v: &[c64]) -> f64 {
        self.apply(v)
            .iter()
            .zip(v)
            .map(|(av, x)| (x.conj() * av).re)
            .sum()
    }
}

pub(crate) fn hermiticity_residual(m: MatRef<'_, c64>) -> f64 {
    let n = m.nrows();
    let mut r = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            r = r.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    r
}

pub(crate) fn max_abs_diff(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

pub(crate) fn checked_dim(length: usize, cap: usize) -> Result<usize> {
    if length >= usize::BITS as usize - 1 {
        return Err(Error::Capacity {
            dim: usize::MAX,
            cap,
        });
    }
    let dim = 1usize << length;
    if dim > cap {
        return Err(Error::Capacity { dim, cap });
    }
    Ok(dim)
}

/// `σ^axis` (or `σ^axis / 2`) on 1-based `site` of a `length`-site chain.
pub fn site_operator(
    axis: Axis,
    site: usize,
    length: usize,
    convention: SpinConvention,
) -> Result<HermitianOperator> {
    if site == 0 || site > length {
        return Err(Error::argument(format!(
            "site {site} is outside 1..={length}"
        )));
    }
    let term = PauliTerm::new(convention.scale(), &[(site, axis)], length);
    HermitianOperator::from_terms(&[term], length, DEFAULT_DIM_CAP)
}

/// Dense Hamiltonian with the default dimension cap.
pub fn build_hamiltonian(model: &SpinModel) -> Result<HermitianOperator> {
    build_hamiltonian_with_cap(model, DEFAULT_DIM_CAP)
}

pub fn build_hamiltonian_with_cap(model: &SpinModel, cap: usize) -> Result<HermitianOperator> {
    model.validate()?;
    HermitianOperator::from_terms(&model.terms(), model.length, cap)
}

/// Total `S^z = Σ σ^z_k / 2`, diagonal in the computational basis.
pub fn total_magnetization(length: usize) -> Result<HermitianOperator> {
    let terms: Vec<_> = (1..=length)
        .map(|k| PauliTerm::new(0.5, &[(k, Axis::Z)], length))
        .collect();
    HermitianOperator::from_terms(&terms, length, DEFAULT_DIM_CAP)
}

/// Terms of `model` touching only the probe (site 1).
pub fn probe_terms(model: &SpinModel) -> Vec<PauliTerm> {
    let probe = site_mask(1, model.length);
    model
        .terms()
        .into_iter()
        .filter(|t| t.within(probe))
        .collect()
}

/// `length − 1` i.i.d. couplings uniform in `[lo, hi]`.
pub fn sample_random_couplings<R: Rng + ?Sized>(
    length: usize,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(lo <= hi) {
        return Err(Error::argument(format!("empty coupling range [{lo}, {hi}]")));
    }
    Ok((0..length.saturating_sub(1))
        .map(|_| lo + (hi - lo) * rng.random::<f64>())
        .collect())
}

/// `length` i.i.d. fields uniform in `[-bound, bound]`.
pub fn sample_random_fields<R: Rng + ?Sized>(
    length: usize,
    bound: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(bound >= 0.0) {
        return Err(Error::argument("field bound must be nonnegative"));
    }
    Ok((0..length)
        .map(|_| bound * (2.0 * rng.random::<f64>() - 1.0))
        .collect())
}
