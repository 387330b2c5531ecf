//! Dense diagonalization and the spacing-ratio chaos indicator.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self, ComputeEigenvectors};
use faer::diag::Diag;
use faer::{c64, Mat, MatRef, Par};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{HermitianOperator, SpinModel, HERMITICITY_TOL};
use crate::rng;
use crate::symmetry::{self, SectorPolicy};

/// Mean of `r̃` for Wigner-Dyson (GOE) spectra.
pub const WIGNER_DYSON_MEAN_RATIO: f64 = 0.5307;

/// Mean of `r̃` for Poisson spectra, `2 ln 2 − 1`.
pub const POISSON_MEAN_RATIO: f64 = 0.386_294_361_119_890_6;

/// Spacings at or below this fraction of the spectral scale count as degenerate.
const DEGENERACY_TOL: f64 = 1e-12;

/// Sorted spectrum, optionally with orthonormal eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct SpectralData {
    eigenvalues: Vec<f64>,
    eigenvectors: Option<Mat<c64>>,
}

impl SpectralData {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> Option<MatRef<'_, c64>> {
        self.eigenvectors.as_ref().map(|v| v.as_ref())
    }

    pub(crate) fn require_vectors(&self) -> Result<MatRef<'_, c64>> {
        self.eigenvectors()
            .ok_or_else(|| Error::argument("spectral data carries no eigenvectors"))
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `max |H V − V Λ|`, or `None` without eigenvectors.
    pub fn residual(&self, h: &HermitianOperator) -> Option<f64> {
        let v = self.eigenvectors.as_ref()?;
        let hv = h.matrix() * v;
        let mut r = 0.0f64;
        for (j, &e) in self.eigenvalues.iter().enumerate() {
            for i in 0..v.nrows() {
                r = r.max((hv[(i, j)] - v[(i, j)] * e).norm());
            }
        }
        Some(r)
    }
}

fn evd_failure(_: evd::EvdError) -> Error {
    Error::Numeric("self-adjoint eigensolver did not converge".into())
}

fn run_evd<T: faer::traits::ComplexField>(
    a: MatRef<'_, T>,
    want_vectors: bool,
) -> Result<(Diag<T>, Option<Mat<T>>)> {
    let n = a.nrows();
    let compute = if want_vectors {
        ComputeEigenvectors::Yes
    } else {
        ComputeEigenvectors::No
    };
    let mut s = Diag::<T>::zeros(n);
    let mut u = want_vectors.then(|| Mat::<T>::zeros(n, n));
    // Sequential kernels keep results bit-identical regardless of worker count.
    let par = Par::Seq;
    let mut buf = MemBuffer::new(evd::self_adjoint_evd_scratch::<T>(
        n,
        compute,
        par,
        Default::default(),
    ));
    evd::self_adjoint_evd(
        a,
        s.as_mut(),
        u.as_mut().map(|u| u.as_mut()),
        par,
        MemStack::new(&mut buf),
        Default::default(),
    )
    .map_err(evd_failure)?;
    Ok((s, u))
}

/// Eigenvalues of a real symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::argument("matrix must be square"));
    }
    let (s, _) = run_evd(a, false)?;
    Ok(sorted(s.column_vector().iter().copied().collect()))
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Full spectrum of `h`, with eigenvectors when requested.
///
/// Real matrices go through the real symmetric solver.
pub fn eigendecompose(h: &HermitianOperator, want_vectors: bool) -> Result<SpectralData> {
    let residual = h.hermiticity_residual();
    if residual > HERMITICITY_TOL {
        return Err(Error::argument(format!(
            "operator is not Hermitian: max |A - A†| = {residual:.3e}"
        )));
    }
    let n = h.dim();
    let (values, vectors) = if h.is_real() {
        let a = Mat::<f64>::from_fn(n, n, |i, j| h.get(i, j).re);
        let (s, u) = run_evd(a.as_ref(), want_vectors)?;
        let u = u.map(|u| Mat::<c64>::from_fn(n, n, |i, j| c64::new(u[(i, j)], 0.0)));
        (s.column_vector().iter().copied().collect::<Vec<_>>(), u)
    } else {
        let (s, u) = run_evd(h.matrix(), want_vectors)?;
        (s.column_vector().iter().map(|z| z.re).collect(), u)
    };
    if values.windows(2).all(|w| w[0] <= w[1]) {
        Ok(SpectralData {
            eigenvalues: values,
            eigenvectors: vectors,
        })
    } else {
        Ok(reorder(values, vectors))
    }
}

fn reorder(values: Vec<f64>, vectors: Option<Mat<c64>>) -> SpectralData {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let eigenvalues = idx.iter().map(|&i| values[i]).collect();
    let eigenvectors = vectors.map(|v| Mat::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, idx[j])]));
    SpectralData {
        eigenvalues,
        eigenvectors,
    }
}

/// Per-level ratios plus the number of degenerate spacings met.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioStatistics {
    pub ratios: Vec<f64>,
    /// Count of spacings treated as exactly zero.
    pub degenerate_spacings: usize,
}

impl RatioStatistics {
    pub fn mean(&self) -> f64 {
        self.ratios.iter().sum::<f64>() / self.ratios.len() as f64
    }
}

/// `r̃_n = min(s_n, s_{n−1}) / max(s_n, s_{n−1})` for every interior level.
///
/// Two zero spacings give 1, one zero spacing gives 0.
pub fn ratio_statistics(eigenvalues: &[f64]) -> Result<RatioStatistics> {
    if eigenvalues.len() < 3 {
        return Err(Error::argument(format!(
            "the ratio statistic needs at least 3 levels, got {}",
            eigenvalues.len()
        )));
    }
    if eigenvalues.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::argument("eigenvalues must be sorted ascending"));
    }
    let scale = eigenvalues
        .iter()
        .fold(0.0f64, |m, e| m.max(e.abs()))
        .max(f64::MIN_POSITIVE);
    let zero = DEGENERACY_TOL * scale;
    let spacings: Vec<f64> = eigenvalues
        .windows(2)
        .map(|w| {
            let s = w[1] - w[0];
            if s <= zero {
                0.0
            } else {
                s
            }
        })
        .collect();
    let degenerate_spacings = spacings.iter().filter(|&&s| s == 0.0).count();
    let ratios = spacings
        .windows(2)
        .map(|w| {
            let (lo, hi) = if w[0] <= w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
            match (lo == 0.0, hi == 0.0) {
                (true, true) => 1.0,
                (true, false) => 0.0,
                _ => lo / hi,
            }
        })
        .collect();
    Ok(RatioStatistics {
        ratios,
        degenerate_spacings,
    })
}

pub fn r_tilde(eigenvalues: &[f64]) -> Result<Vec<f64>> {
    Ok(ratio_statistics(eigenvalues)?.ratios)
}

/// Affine map from mean `r̃` to η (0 Poisson, 1 Wigner-Dyson), unclamped.
pub fn eta_from_mean_ratio(mean_ratio: f64) -> f64 {
    (mean_ratio - POISSON_MEAN_RATIO) / (WIGNER_DYSON_MEAN_RATIO - POISSON_MEAN_RATIO)
}

pub fn eta(eigenvalues: &[f64]) -> Result<f64> {
    Ok(eta_from_mean_ratio(ratio_statistics(eigenvalues)?.mean()))
}

/// How η is measured for a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaConfig {
    pub sector: SectorPolicy,
    /// Disorder draws averaged over for stochastic models.
    pub disorder_realizations: usize,
    pub seed: u64,
}

impl EtaConfig {
    pub fn new(sector: SectorPolicy) -> Self {
        EtaConfig {
            sector,
            disorder_realizations: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub eta: f64,
    pub mean_ratio: f64,
    pub sector_dim: usize,
    pub degenerate_spacings: usize,
    pub realizations: usize,
}

/// η of `model` on the configured symmetry sector.
///
/// Stochastic models are averaged over `disorder_realizations` draws, the
/// `i`-th drawn from stream `(seed, i)`.
pub fn eta_for_model(model: &SpinModel, config: &EtaConfig) -> Result<EtaEstimate> {
    let realizations = if model.is_stochastic() {
        config.disorder_realizations.max(1)
    } else {
        1
    };
    let mut ratio_sum = 0.0;
    let mut degenerate = 0;
    let mut dim = 0;
    for r in 0..realizations {
        let instance = if model.is_stochastic() {
            model.resample(&mut rng::stream(config.seed, &[r as u64]))?
        } else {
            model.clone()
        };
        let h = symmetry::sector_hamiltonian(&instance, &config.sector)?;
        dim = h.dim();
        let spectrum = eigendecompose(&h, false)?;
        let stats = ratio_statistics(spectrum.eigenvalues())?;
        ratio_sum += stats.mean();
        degenerate += stats.degenerate_spacings;
    }
    let mean_ratio = ratio_sum / realizations as f64;
    Ok(EtaEstimate {
        eta: eta_from_mean_ratio(mean_ratio),
        mean_ratio,
        sector_dim: dim,
        degenerate_spacings: degenerate,
        realizations,
    })
}

/// GOE sample: standard-normal diagonal, off-diagonals standard normal / √2.
pub fn goe_matrix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat<f64> {
    let mut m = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = rng.sample(StandardNormal);
        for i in 0..j {
            let x: f64 = rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    m
}

/// Spectrum with i.i.d. unit-exponential spacings (Poisson reference).
pub fn poisson_spectrum<R: Rng + ?Sized>(levels: usize, rng: &mut R) -> Vec<f64> {
    let mut e = 0.0;
    (0..levels)
        .map(|_| {
            let level = e;
            e += rng.sample::<f64, _>(Exp1);
            level
        })
        .collect()
}
