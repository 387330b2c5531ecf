//! Exact propagation of chain states and the probe (site 1) observables.
//!
//! Time is measured in units of `1/J` with `ħ = 1`. Every propagator is
//! built from one eigendecomposition, `U(t) = V e^{−iΛt} V†`.

use std::f64::consts::PI;

use faer::{c64, Mat, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{build_hamiltonian, hermiticity_residual, SpinModel};
use crate::parallel;
use crate::rng::{self, Stream};
use crate::spectral::{eigendecompose, SpectralData};

/// Norm and trace tolerance for state constructors.
pub const STATE_TOL: f64 = 1e-12;

/// Lowest eigenvalue accepted in a density matrix.
pub const POSITIVITY_TOL: f64 = 1e-10;

/// Columns propagated per batch; bounds scratch memory for long grids.
const TIME_BATCH: usize = 256;

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

/// Unit-norm state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amplitudes: Vec<c64>,
}

impl PureState {
    /// Wraps `amplitudes` after checking the norm is 1 to 1e-12.
    pub fn new(amplitudes: Vec<c64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::argument("state vector is empty"));
        }
        let norm = norm(&amplitudes);
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(Error::argument(format!("state norm is {norm}, expected 1")));
        }
        Ok(PureState { amplitudes })
    }

    /// Rescales `amplitudes` to unit norm.
    pub fn normalized(mut amplitudes: Vec<c64>) -> Result<Self> {
        let n = norm(&amplitudes);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::argument("cannot normalize a zero or non-finite vector"));
        }
        amplitudes.iter_mut().for_each(|a| *a /= n);
        Ok(PureState { amplitudes })
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::argument(format!("basis index {index} outside dimension {dim}")));
        }
        let mut amplitudes = vec![ZERO; dim];
        amplitudes[index] = c64::new(1.0, 0.0);
        Ok(PureState { amplitudes })
    }

    /// `|φ_1⟩ ⊗ … ⊗ |φ_L⟩`, site 1 first. Each factor is `[⟨↑|φ⟩, ⟨↓|φ⟩]`.
    pub fn product(factors: &[[c64; 2]]) -> Result<Self> {
        let mut amplitudes = vec![c64::new(1.0, 0.0)];
        for f in factors {
            amplitudes = amplitudes
                .iter()
                .flat_map(|&a| [a * f[0], a * f[1]])
                .collect();
        }
        Self::new(amplitudes)
    }

    /// `|self⟩ ⊗ |other⟩`.
    pub fn tensor(&self, other: &PureState) -> PureState {
        PureState {
            amplitudes: self
                .amplitudes
                .iter()
                .flat_map(|&a| other.amplitudes.iter().map(move |&b| a * b))
                .collect(),
        }
    }

    pub(crate) fn from_trusted(amplitudes: Vec<c64>) -> Self {
        PureState { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[c64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<c64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &PureState) -> c64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn density(&self) -> DensityMatrix {
        let n = self.dim();
        let a = &self.amplitudes;
        DensityMatrix {
            matrix: Mat::from_fn(n, n, |i, j| a[i] * a[j].conj()),
        }
    }
}

fn norm(v: &[c64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    matrix: Mat<c64>,
}

impl DensityMatrix {
    /// Checks Hermiticity and trace to 1e-12 and eigenvalues `≥ −1e-10`.
    pub fn new(matrix: Mat<c64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::argument("density matrix must be square and non-empty"));
        }
        let h = hermiticity_residual(matrix.as_ref());
        if h > STATE_TOL {
            return Err(Error::argument(format!("density matrix is not Hermitian ({h:.3e})")));
        }
        let rho = DensityMatrix { matrix };
        let tr = rho.trace();
        if (tr - 1.0).abs() > STATE_TOL {
            return Err(Error::argument(format!("density matrix trace is {tr}, expected 1")));
        }
        let op = crate::operators::HermitianOperator::from_trusted(rho.matrix.clone());
        let lowest = eigendecompose(&op, false)?.eigenvalues()[0];
        if lowest < -POSITIVITY_TOL {
            return Err(Error::argument(format!(
                "density matrix has negative eigenvalue {lowest:.3e}"
            )));
        }
        Ok(rho)
    }

    /// `I / dim`.
    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::argument("dimension must be positive"));
        }
        let w = 1.0 / dim as f64;
        Ok(DensityMatrix {
            matrix: Mat::from_fn(dim, dim, |i, j| c64::new(if i == j { w } else { 0.0 }, 0.0)),
        })
    }

    pub(crate) fn from_trusted(matrix: Mat<c64>) -> Self {
        DensityMatrix { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> MatRef<'_, c64> {
        self.matrix.as_ref()
    }

    pub fn get(&self, row: usize, col: usize) -> c64 {
        self.matrix[(row, col)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).sum()
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> f64 {
        let n = self.dim();
        let mut p = 0.0;
        for j in 0..n {
            for i in 0..n {
                p += self.matrix[(i, j)].norm_sqr();
            }
        }
        p
    }

    /// `ρ ⊗ σ`.
    pub fn tensor(&self, other: &DensityMatrix) -> DensityMatrix {
        let m = other.dim();
        DensityMatrix {
            matrix: Mat::from_fn(self.dim() * m, self.dim() * m, |i, j| {
                self.matrix[(i / m, j / m)] * other.matrix[(i % m, j % m)]
            }),
        }
    }
}

/// Either kind of state, for operations defined on both.
#[derive(Clone, Copy, Debug)]
pub enum StateRef<'a> {
    Pure(&'a PureState),
    Mixed(&'a DensityMatrix),
}

impl<'a> From<&'a PureState> for StateRef<'a> {
    fn from(s: &'a PureState) -> Self {
        StateRef::Pure(s)
    }
}

impl<'a> From<&'a DensityMatrix> for StateRef<'a> {
    fn from(s: &'a DensityMatrix) -> Self {
        StateRef::Mixed(s)
    }
}

impl StateRef<'_> {
    fn dim(&self) -> usize {
        match self {
            StateRef::Pure(s) => s.dim(),
            StateRef::Mixed(s) => s.dim(),
        }
    }
}

/// How single-site directions are drawn for random product states.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMeasure {
    /// Rotation-invariant: `cos θ` uniform on `(−1, 1]`.
    #[default]
    SphereUniform,
    /// `θ` uniform on `[0, π)`; concentrates directions near the poles.
    AngleUniform,
}

/// `cos(θ/2)|↑⟩ + e^{iφ} sin(θ/2)|↓⟩` for a random direction.
pub fn random_qubit<R: Rng + ?Sized>(measure: SamplingMeasure, rng: &mut R) -> [c64; 2] {
    let theta = match measure {
        SamplingMeasure::SphereUniform => (1.0 - 2.0 * rng.random::<f64>()).acos(),
        SamplingMeasure::AngleUniform => PI * rng.random::<f64>(),
    };
    let phi = 2.0 * PI * rng.random::<f64>();
    let (s, c) = (0.5 * theta).sin_cos();
    [c64::new(c, 0.0), c64::from_polar(s, phi)]
}

/// Product of `length` independent random single-site states, sphere-uniform.
pub fn random_product_state<R: Rng + ?Sized>(length: usize, rng: &mut R) -> Result<PureState> {
    random_product_state_with(length, SamplingMeasure::SphereUniform, rng)
}

pub fn random_product_state_with<R: Rng + ?Sized>(
    length: usize,
    measure: SamplingMeasure,
    rng: &mut R,
) -> Result<PureState> {
    if length == 0 {
        return Err(Error::argument("a product state needs at least one site"));
    }
    let factors: Vec<[c64; 2]> = (0..length).map(|_| random_qubit(measure, rng)).collect();
    PureState::product(&factors)
}

/// `0, T/n, …, T` with `n = round(T/dt)` steps, so the endpoint is exact.
pub fn time_grid(horizon: f64, dt: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon.is_finite() && dt > 0.0 && dt.is_finite()) {
        return Err(Error::argument(format!(
            "time grid needs positive finite T and dt, got T={horizon}, dt={dt}"
        )));
    }
    let steps = ((horizon / dt).round() as usize).max(1);
    Ok((0..=steps)
        .map(|i| horizon * i as f64 / steps as f64)
        .collect())
}

fn check_dim(spectral: &SpectralData, dim: usize) -> Result<MatRef<'_, c64>> {
    let v = spectral.require_vectors()?;
    if v.nrows() != dim {
        return Err(Error::argument(format!(
            "state dimension {dim} does not match spectral dimension {}",
            v.nrows()
        )));
    }
    Ok(v)
}

/// `V† x`.
fn to_eigenbasis(v: MatRef<'_, c64>, x: &[c64]) -> Vec<c64> {
    (0..v.ncols())
        .map(|n| {
            v.col(n)
                .iter()
                .zip(x)
                .map(|(a, b)| a.conj() * b)
                .sum()
        })
        .collect()
}

/// Columns `V e^{−iΛt} c` for a batch of times.
fn propagate_batch(v: MatRef<'_, c64>, energies: &[f64], coeffs: &[c64], times: &[f64]) -> Mat<c64> {
    let phased = Mat::from_fn(energies.len(), times.len(), |n, k| {
        coeffs[n] * c64::from_polar(1.0, -energies[n] * times[k])
    });
    v * &phased
}

/// `ψ(t) = V e^{−iΛt} V† ψ0` at every sample; `t = 0` returns `ψ0` exactly.
pub fn evolve_state(
    spectral: &SpectralData,
    psi0: &PureState,
    times: &[f64],
) -> Result<Vec<PureState>> {
    let v = check_dim(spectral, psi0.dim())?;
    let coeffs = to_eigenbasis(v, psi0.amplitudes());
    let mut out = Vec::with_capacity(times.len());
    for chunk in times.chunks(TIME_BATCH) {
        let psi = propagate_batch(v, spectral.eigenvalues(), &coeffs, chunk);
        for (k, &t) in chunk.iter().enumerate() {
            out.push(if t == 0.0 {
                psi0.clone()
            } else {
                PureState::from_trusted(psi.col(k).iter().copied().collect())
            });
        }
    }
    Ok(out)
}

/// `ρ(t) = U ρ0 U†`, computed as `V (R ∘ e^{−i(E_n−E_m)t}) V†` with `R = V† ρ0 V`.
pub fn evolve_density(
    spectral: &SpectralData,
    rho0: &DensityMatrix,
    times: &[f64],
) -> Result<Vec<DensityMatrix>> {
    let v = check_dim(spectral, rho0.dim())?;
    let e = spectral.eigenvalues();
    let r = v.adjoint() * rho0.matrix() * v;
    times
        .iter()
        .map(|&t| {
            if t == 0.0 {
                return Ok(rho0.clone());
            }
            let phase: Vec<c64> = e.iter().map(|&en| c64::from_polar(1.0, -en * t)).collect();
            let rt = Mat::from_fn(r.nrows(), r.ncols(), |n, m| r[(n, m)] * phase[n] * phase[m].conj());
            let rho = v * &rt * v.adjoint();
            Ok(DensityMatrix::from_trusted(hermitize(rho)))
        })
        .collect()
}

fn hermitize(m: Mat<c64>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

fn chain_length(dim: usize, length: usize) -> Result<()> {
    if length == 0 || length >= usize::BITS as usize || dim != 1 << length {
        return Err(Error::argument(format!(
            "state dimension {dim} does not match a {length}-site chain"
        )));
    }
    Ok(())
}

/// Reduced state of sites `1..=sites`, tracing out the rest.
pub fn reduce_to_leading_sites<'a>(
    state: impl Into<StateRef<'a>>,
    length: usize,
    sites: usize,
) -> Result<DensityMatrix> {
    let state = state.into();
    chain_length(state.dim(), length)?;
    if sites == 0 || sites > length {
        return Err(Error::argument(format!("cannot keep {sites} of {length} sites")));
    }
    let keep = 1usize << sites;
    let env = 1usize << (length - sites);
    let mut m = Mat::<c64>::zeros(keep, keep);
    match state {
        StateRef::Pure(psi) => {
            let a = psi.amplitudes();
            for j in 0..keep {
                for i in 0..=j {
                    let s: c64 = (0..env).map(|e| a[i * env + e] * a[j * env + e].conj()).sum();
                    m[(i, j)] = s;
                    m[(j, i)] = s.conj();
                }
            }
        }
        StateRef::Mixed(rho) => {
            for j in 0..keep {
                for i in 0..=j {
                    let s: c64 = (0..env).map(|e| rho.get(i * env + e, j * env + e)).sum();
                    m[(i, j)] = s;
                    m[(j, i)] = s.conj();
                }
            }
        }
    }
    Ok(DensityMatrix::from_trusted(m))
}

/// Probe (site 1) reduced density matrix.
pub fn reduce_to_probe<'a>(state: impl Into<StateRef<'a>>, length: usize) -> Result<DensityMatrix> {
    reduce_to_leading_sites(state, length, 1)
}

/// Bloch vector `r_i = Tr(σ_i ρ)` and purity `Tr ρ²` of a qubit state.
pub fn bloch_and_purity(rho: &DensityMatrix) -> Result<([f64; 3], f64)> {
    if rho.dim() != 2 {
        return Err(Error::argument("Bloch vectors are defined for 2x2 states"));
    }
    Ok(bloch_from_blocks(rho.get(0, 0).re, rho.get(1, 1).re, rho.get(0, 1)))
}

/// `ρ01 = (r_x − i r_y)/2`.
fn bloch_from_blocks(rho00: f64, rho11: f64, rho01: c64) -> ([f64; 3], f64) {
    let r = [2.0 * rho01.re, -2.0 * rho01.im, rho00 - rho11];
    let p = rho00 * rho00 + rho11 * rho11 + 2.0 * rho01.norm_sqr();
    (r, p)
}

/// Probe observables of a pure chain state given as a column slice.
fn probe_of_column(col: &[c64]) -> ([f64; 3], f64) {
    let (top, bottom) = col.split_at(col.len() / 2);
    let (mut p0, mut p1, mut c) = (0.0, 0.0, ZERO);
    for (a, b) in top.iter().zip(bottom) {
        p0 += a.norm_sqr();
        p1 += b.norm_sqr();
        c += a * b.conj();
    }
    bloch_from_blocks(p0, p1, c)
}

/// Sampled probe Bloch vector and purity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrajectory {
    pub times: Vec<f64>,
    pub bloch: Vec<[f64; 3]>,
    pub purity: Vec<f64>,
}

impl ProbeTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Samples with `t0 ≤ t ≤ t1`, as index range.
    fn window_range(&self, window: [f64; 2]) -> Result<std::ops::Range<usize>> {
        let [t0, t1] = window;
        if !(t1 > t0) {
            return Err(Error::argument(format!("empty time window [{t0}, {t1}]")));
        }
        let slack = 1e-9 * t1.abs().max(1.0);
        let lo = self.times.partition_point(|&t| t < t0 - slack);
        let hi = self.times.partition_point(|&t| t <= t1 + slack);
        if hi < lo + 2
            || (self.times[lo] - t0).abs() > slack
            || (self.times[hi - 1] - t1).abs() > slack
        {
            return Err(Error::argument(format!(
                "sample grid does not cover the window [{t0}, {t1}]"
            )));
        }
        Ok(lo..hi)
    }

    /// `δ(P), δ(r_x), δ(r_y), δ(r_z)` over the samples in `window`.
    pub fn window_fluctuations(&self, window: [f64; 2]) -> Result<[f64; 4]> {
        let r = self.window_range(window)?;
        let p = fluctuations(&self.purity[r.clone()])?;
        let comp = |i: usize| fluctuations(&self.bloch[r.clone()].iter().map(|b| b[i]).collect::<Vec<_>>());
        Ok([p, comp(0)?, comp(1)?, comp(2)?])
    }
}

/// Probe trajectory of `ψ0` propagated under `spectral`.
pub fn probe_trajectory(
    spectral: &SpectralData,
    psi0: &PureState,
    times: &[f64],
) -> Result<ProbeTrajectory> {
    let v = check_dim(spectral, psi0.dim())?;
    if psi0.dim() < 2 {
        return Err(Error::argument("the chain has no probe"));
    }
    let coeffs = to_eigenbasis(v, psi0.amplitudes());
    let mut traj = ProbeTrajectory {
        times: times.to_vec(),
        bloch: Vec::with_capacity(times.len()),
        purity: Vec::with_capacity(times.len()),
    };
    for chunk in times.chunks(TIME_BATCH) {
        let psi = propagate_batch(v, spectral.eigenvalues(), &coeffs, chunk);
        for (k, &t) in chunk.iter().enumerate() {
            let (r, p) = if t == 0.0 {
                probe_of_column(psi0.amplitudes())
            } else {
                probe_of_column(psi.col_as_slice(k))
            };
            traj.bloch.push(r);
            traj.purity.push(p);
        }
    }
    Ok(traj)
}

/// Trapezoidal `(1/(t1−t0)) ∫ y dt` over the samples in `window`.
pub fn time_average(times: &[f64], values: &[f64], window: [f64; 2]) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::argument("times and values differ in length"));
    }
    if times.is_empty() {
        return Err(Error::argument("no samples to average"));
    }
    let traj = ProbeTrajectory {
        times: times.to_vec(),
        bloch: Vec::new(),
        purity: Vec::new(),
    };
    let r = traj.window_range(window)?;
    let (t, y) = (&times[r.clone()], &values[r]);
    // Offsetting by the first sample keeps constant signals exact.
    let y0 = y[0];
    let integral: f64 = t
        .windows(2)
        .zip(y.windows(2))
        .map(|(t, y)| 0.5 * (t[1] - t[0]) * ((y[0] - y0) + (y[1] - y0)))
        .sum();
    Ok(y0 + integral / (t[t.len() - 1] - t[0]))
}

/// Trapezoidal time average of the probe purity over `window`.
pub fn time_averaged_purity(traj: &ProbeTrajectory, window: [f64; 2]) -> Result<f64> {
    time_average(&traj.times, &traj.purity, window)
}

/// Time grid and sampling shared by every realization of an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub realizations: usize,
    /// Averaging horizon `T`; the window is `[0, T]`.
    pub horizon: f64,
    pub dt: f64,
    pub measure: SamplingMeasure,
}

impl EnsembleConfig {
    pub fn new(realizations: usize, horizon: f64, dt: f64) -> Self {
        EnsembleConfig {
            realizations,
            horizon,
            dt,
            measure: SamplingMeasure::SphereUniform,
        }
    }
}

/// Mean, population standard deviation and the per-realization values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleAverage {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl EnsembleAverage {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::argument("ensemble is empty"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(EnsembleAverage { mean, std, values })
    }
}

/// Stream for realization `index`. Disorder (if any) is drawn from it first,
/// then the initial state.
pub fn realization_stream(seed: u64, index: usize) -> Stream {
    rng::stream(seed, &[index as u64])
}

/// Model instance and initial state of one realization.
pub fn realization(
    model: &SpinModel,
    measure: SamplingMeasure,
    seed: u64,
    index: usize,
) -> Result<(SpinModel, PureState)> {
    let mut rng = realization_stream(seed, index);
    let instance = model.resample(&mut rng)?;
    let psi0 = random_product_state_with(model.length, measure, &mut rng)?;
    Ok((instance, psi0))
}

/// Double average of the probe purity: over `[0, T]`, then over random
/// initial product states (and disorder draws for stochastic models).
pub fn ensemble_averaged_purity(
    model: &SpinModel,
    config: &EnsembleConfig,
    seed: u64,
) -> Result<EnsembleAverage> {
    if config.realizations == 0 {
        return Err(Error::argument("at least one realization is required"));
    }
    let times = time_grid(config.horizon, config.dt)?;
    let window = [0.0, config.horizon];
    let shared = if model.is_stochastic() {
        None
    } else {
        Some(eigendecompose(&build_hamiltonian(model)?, true)?)
    };
    let values = parallel::try_map(config.realizations, |i| {
        let (instance, psi0) = realization(model, config.measure, seed, i)?;
        let owned;
        let spectral = match &shared {
            Some(s) => s,
            None => {
                owned = eigendecompose(&build_hamiltonian(&instance)?, true)?;
                &owned
            }
        };
        time_averaged_purity(&probe_trajectory(spectral, &psi0, &times)?, window)
    })?;
    EnsembleAverage::from_values(values)
}

/// `(v − min) / (max − min)` using the extremes of `values`.
pub fn normalize_curve(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::argument("normalization needs at least two values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument("cannot normalize non-finite values"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateRange(lo));
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Population standard deviation `√(⟨X²⟩ − ⟨X⟩²)`.
pub fn fluctuations(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::argument("fluctuations need at least two samples"));
    }
    let n = series.len() as f64;
    let x0 = series[0];
    let mean = series.iter().map(|x| x - x0).sum::<f64>() / n;
    Ok((series.iter().map(|x| (x - x0 - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// Gibbs weights `e^{−β(E_n − E_0)}/Z` of an ascending spectrum.
pub fn gibbs_weights(energies: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::argument(format!("inverse temperature must be finite and >= 0, got {beta}")));
    }
    let e0 = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = energies.iter().map(|e| (-beta * (e - e0)).exp()).collect();
    let z: f64 = w.iter().sum();
    if !(z.is_finite() && z >= 1.0) {
        return Err(Error::Numeric(format!("partition function is {z}")));
    }
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// `e^{−βH_env}/Z` over sites `2..=L`, where `H_env` is
/// [`SpinModel::environment`].
pub fn gibbs_environment_state(model: &SpinModel, beta: f64) -> Result<DensityMatrix> {
    let env = model.environment()?;
    let spectral = eigendecompose(&build_hamiltonian(&env)?, true)?;
    let p = gibbs_weights(spectral.eigenvalues(), beta)?;
    let v = spectral.require_vectors()?;
    let n = v.nrows();
    let scaled = Mat::from_fn(n, n, |i, k| v[(i, k)] * p[k]);
    Ok(DensityMatrix::from_trusted(hermitize(&scaled * v.adjoint())))
}

/// Probe dynamics for a product initial state `|ψ_probe⟩⟨ψ_probe| ⊗ ρ_env`,
/// as the linear map `|i⟩⟨j| ↦ Φ_t(|i⟩⟨j|)` sampled on a time grid.
///
/// Once built, the reduced state for any probe state costs O(1) per sample.
#[derive(Clone, Debug)]
pub struct ProbeChannel {
    pub times: Vec<f64>,
    /// `maps[t][2i + j]` is the 2x2 matrix `Φ_t(|i⟩⟨j|)`, row-major.
    maps: Vec<[[c64; 4]; 4]>,
}

impl ProbeChannel {
    /// Builds the channel for environment state `Σ_k p_k |e_k⟩⟨e_k|`.
    ///
    /// `env_states` holds the `e_k` as columns; `weights` are the `p_k`.
    pub fn new(
        spectral: &SpectralData,
        env_states: MatRef<'_, c64>,
        weights: &[f64],
        times: &[f64],
    ) -> Result<Self> {
        let v = spectral.require_vectors()?;
        let dim = v.nrows();
        let half = dim / 2;
        if dim < 2 || env_states.nrows() != half || env_states.ncols() != weights.len() {
            return Err(Error::argument("environment states do not match the chain"));
        }
        if weights.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::argument("environment weights must be nonnegative"));
        }
        let kept: Vec<usize> = (0..weights.len()).filter(|&k| weights[k] > 0.0).collect();
        let scaled = Mat::from_fn(half, kept.len(), |e, c| env_states[(e, kept[c])] * weights[kept[c]].sqrt());
        // V† (|i⟩ ⊗ √p_k e_k) for i = 0, 1.
        let w = [
            v.subrows(0, half).adjoint() * &scaled,
            v.subrows(half, half).adjoint() * &scaled,
        ];
        let e = spectral.eigenvalues();
        let maps = times
            .iter()
            .map(|&t| {
                let phase: Vec<c64> = e.iter().map(|&en| c64::from_polar(1.0, -en * t)).collect();
                let y: Vec<Mat<c64>> = w
                    .iter()
                    .map(|wi| v * Mat::from_fn(wi.nrows(), wi.ncols(), |n, c| wi[(n, c)] * phase[n]))
                    .collect();
                let mut out = [[ZERO; 4]; 4];
                for i in 0..2 {
                    for j in 0..2 {
                        for a in 0..2 {
                            for b in 0..2 {
                                let mut s = ZERO;
                                for c in 0..y[i].ncols() {
                                    let (yi, yj) = (y[i].col(c), y[j].col(c));
                                    for env in 0..half {
                                        s += yi[a * half + env] * yj[b * half + env].conj();
                                    }
                                }
                                out[2 * i + j][2 * a + b] = s;
                            }
                        }
                    }
                }
                out
            })
            .collect();
        Ok(ProbeChannel {
            times: times.to_vec(),
            maps,
        })
    }

    /// Channel for a Gibbs environment of `model` at inverse temperature `beta`.
    pub fn gibbs(model: &SpinModel, beta: f64, times: &[f64]) -> Result<Self> {
        let full = eigendecompose(&build_hamiltonian(model)?, true)?;
        let env = eigendecompose(&build_hamiltonian(&model.environment()?)?, true)?;
        let p = gibbs_weights(env.eigenvalues(), beta)?;
        Self::new(&full, env.require_vectors()?, &p, times)
    }

    /// Probe trajectory for the initial probe Bloch vector `n`.
    pub fn trajectory(&self, n: [f64; 3]) -> ProbeTrajectory {
        let rho = [
            c64::new(0.5 * (1.0 + n[2]), 0.0),
            c64::new(0.5 * n[0], -0.5 * n[1]),
            c64::new(0.5 * n[0], 0.5 * n[1]),
            c64::new(0.5 * (1.0 - n[2]), 0.0),
        ];
        let mut traj = ProbeTrajectory {
            times: self.times.clone(),
            bloch: Vec::with_capacity(self.times.len()),
            purity: Vec::with_capacity(self.times.len()),
        };
        for map in &self.maps {
            let mut out = [ZERO; 4];
            for (ij, m) in map.iter().enumerate() {
                for ab in 0..4 {
                    out[ab] += rho[ij] * m[ab];
                }
            }
            let (r, p) = bloch_from_blocks(out[0].re, out[3].re, out[1]);
            traj.bloch.push(r);
            traj.purity.push(p);
        }
        traj
    }
}

/// Bloch vector of a qubit state `[⟨↑|φ⟩, ⟨↓|φ⟩]`.
pub fn qubit_bloch(q: [c64; 2]) -> [f64; 3] {
    let c = q[0] * q[1].conj();
    [2.0 * c.re, -2.0 * c.im, q[0].norm_sqr() - q[1].norm_sqr()]
}

/// One oscillating contribution `2 Re(A e^{iωt})` to the Bloch vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OscillatoryTerm {
    /// `E_n − E_m`.
    pub frequency: f64,
    pub amplitude: [c64; 3],
}

/// `r(t) = Σ_n |C_n|² ⟨n|σ⊗I|n⟩ + Σ_{n<m} 2 Re(C_n* C_m ⟨n|σ⊗I|m⟩ e^{i(E_n−E_m)t})`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlochExpansion {
    /// `C_n = ⟨n|ψ0⟩`.
    pub coefficients: Vec<c64>,
    pub diagonal: [f64; 3],
    pub oscillatory: Vec<OscillatoryTerm>,
}

/// Pairs whose weight `|C_n C_m|` is below this are dropped from the expansion.
const EXPANSION_CUTOFF: f64 = 1e-13;

impl BlochExpansion {
    pub fn evaluate(&self, t: f64) -> [f64; 3] {
        let mut r = self.diagonal;
        for term in &self.oscillatory {
            let ph = c64::from_polar(1.0, term.frequency * t);
            for (ri, a) in r.iter_mut().zip(&term.amplitude) {
                *ri += 2.0 * (a * ph).re;
            }
        }
        r
    }
}

/// Eigenbasis expansion of the probe Bloch vector for initial state `ψ0`.
pub fn bloch_eigenbasis_expansion(spectral: &SpectralData, psi0: &PureState) -> Result<BlochExpansion> {
    let v = check_dim(spectral, psi0.dim())?;
    let dim = v.nrows();
    if dim < 2 {
        return Err(Error::argument("the chain has no probe"));
    }
    let half = dim / 2;
    let c = to_eigenbasis(v, psi0.amplitudes());
    let i = c64::new(0.0, 1.0);
    // (σ_a ⊗ I) V for a = x, y, z.
    let sx = Mat::from_fn(dim, dim, |r, k| v[((r + half) % dim, k)]);
    let sy = Mat::from_fn(dim, dim, |r, k| {
        if r < half {
            -i * v[(r + half, k)]
        } else {
            i * v[(r - half, k)]
        }
    });
    let sz = Mat::from_fn(dim, dim, |r, k| if r < half { v[(r, k)] } else { -v[(r, k)] });
    let m = [v.adjoint() * &sx, v.adjoint() * &sy, v.adjoint() * &sz];
    let e = spectral.eigenvalues();
    let mut diagonal = [0.0; 3];
    for n in 0..dim {
        for a in 0..3 {
            diagonal[a] += c[n].norm_sqr() * m[a][(n, n)].re;
        }
    }
    let mut oscillatory = Vec::new();
    for mm in 0..dim {
        for n in 0..mm {
            let w = c[n].conj() * c[mm];
            if w.norm() <= EXPANSION_CUTOFF {
                continue;
            }
            oscillatory.push(OscillatoryTerm {
                frequency: e[n] - e[mm],
                amplitude: [w * m[0][(n, mm)], w * m[1][(n, mm)], w * m[2][(n, mm)]],
            });
        }
    }
    Ok(BlochExpansion {
        coefficients: c,
        diagonal,
        oscillatory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{site_operator, Axis, SpinConvention};
    use proptest::prelude::{prop_assert, proptest};

    fn c(re: f64, im: f64) -> c64 {
        c64::new(re, im)
    }

    fn random_state(dim: usize, seed: u64) -> PureState {
        use rand_distr::StandardNormal;
        let mut r = rng::stream(seed, &[]);
        PureState::normalized(
            (0..dim)
                .map(|_| c(r.sample(StandardNormal), r.sample(StandardNormal)))
                .collect(),
        )
        .unwrap()
    }

    fn random_density(dim: usize, seed: u64) -> DensityMatrix {
        // Mixture of random pure states.
        let mut m = Mat::<c64>::zeros(dim, dim);
        for k in 0..3 {
            let w = [0.5, 0.3, 0.2][k];
            let s = random_state(dim, seed * 10 + k as u64);
            let d = s.density();
            for j in 0..dim {
                for i in 0..dim {
                    m[(i, j)] += d.get(i, j) * w;
                }
            }
        }
        DensityMatrix::new(m).unwrap()
    }

    /// Partial trace by explicit index summation over `ρ[(a,e),(b,e)]`.
    fn brute_partial_trace(rho: &DensityMatrix, length: usize) -> [[c64; 2]; 2] {
        let mut out = [[ZERO; 2]; 2];
        for a in 0..2usize {
            for b in 0..2usize {
                for e in 0..1usize << (length - 1) {
                    let row = (a << (length - 1)) | e;
                    let col = (b << (length - 1)) | e;
                    out[a][b] += rho.get(row, col);
                }
            }
        }
        out
    }

    fn ising(length: usize, h_z: f64) -> SpinModel {
        SpinModel::ising_uniform(length, 1.0, h_z, 1.0).unwrap()
    }

    fn spectral_of(model: &SpinModel) -> SpectralData {
        eigendecompose(&build_hamiltonian(model).unwrap(), true).unwrap()
    }

    #[test]
    fn product_states_have_pure_marginals() {
        let mut r = rng::stream(1, &[]);
        for l in 1..=5 {
            let psi = random_product_state(l, &mut r).unwrap();
            assert!((psi.norm() - 1.0).abs() < 1e-12);
            for k in 1..=l {
                let keep = reduce_to_leading_sites(&psi, l, k).unwrap();
                assert!((keep.purity() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sphere_uniform_directions_are_isotropic() {
        let mut r = rng::stream(2, &[]);
        let n = 100_000;
        let mut mean = [0.0; 3];
        let mut mean_z_angle = 0.0;
        for _ in 0..n {
            let b = qubit_bloch(random_qubit(SamplingMeasure::SphereUniform, &mut r));
            for a in 0..3 {
                mean[a] += b[a] / n as f64;
            }
            mean_z_angle += b[2].abs() / n as f64;
        }
        assert!(mean.iter().all(|m| m.abs() < 0.02), "{mean:?}");
        // ⟨|cos θ|⟩ = 1/2 on the sphere.
        assert!((mean_z_angle - 0.5).abs() < 0.01);
    }

    #[test]
    fn angle_uniform_favours_the_poles() {
        let mut r = rng::stream(2, &[]);
        let n = 100_000;
        let m: f64 = (0..n)
            .map(|_| qubit_bloch(random_qubit(SamplingMeasure::AngleUniform, &mut r))[2].abs())
            .sum::<f64>()
            / n as f64;
        // ⟨|cos θ|⟩ = 2/π for θ uniform.
        assert!((m - 2.0 / PI).abs() < 0.01);
    }

    #[test]
    fn product_state_is_seed_deterministic() {
        let a = random_product_state(4, &mut rng::stream(9, &[3])).unwrap();
        let b = random_product_state(4, &mut rng::stream(9, &[3])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn product_factor_order_puts_site_one_first() {
        let up = [c(1.0, 0.0), ZERO];
        let down = [ZERO, c(1.0, 0.0)];
        let psi = PureState::product(&[down, up, up]).unwrap();
        assert_eq!(psi.amplitudes()[0b100], c(1.0, 0.0));
    }

    #[test]
    fn rabi_oscillation() {
        let h = site_operator(Axis::X, 1, 1, SpinConvention::Pauli).unwrap();
        let sd = eigendecompose(&h, true).unwrap();
        let psi0 = PureState::basis(2, 0).unwrap();
        let times = time_grid(10.0, 0.05).unwrap();
        let states = evolve_state(&sd, &psi0, &times).unwrap();
        assert_eq!(states[0], psi0);
        let z = site_operator(Axis::Z, 1, 1, SpinConvention::Pauli).unwrap();
        for (s, t) in states.iter().zip(&times) {
            assert!((z.expectation(s.amplitudes()) - (2.0 * t).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_and_norm_are_conserved() {
        let model = ising(6, 0.5);
        let h = build_hamiltonian(&model).unwrap();
        let sd = eigendecompose(&h, true).unwrap();
        let psi0 = random_product_state(6, &mut rng::stream(5, &[])).unwrap();
        let e0 = h.expectation(psi0.amplitudes());
        for s in evolve_state(&sd, &psi0, &time_grid(30.0, 0.5).unwrap()).unwrap() {
            assert!((s.norm() - 1.0).abs() < 1e-10);
            assert!((h.expectation(s.amplitudes()) - e0).abs() < 1e-10);
        }
    }

    #[test]
    fn evolution_rejects_missing_vectors_and_bad_dims() {
        let h = build_hamiltonian(&ising(3, 0.5)).unwrap();
        let no_vectors = eigendecompose(&h, false).unwrap();
        let psi = PureState::basis(8, 0).unwrap();
        assert!(matches!(evolve_state(&no_vectors, &psi, &[1.0]), Err(Error::Argument(_))));
        let sd = eigendecompose(&h, true).unwrap();
        assert!(evolve_state(&sd, &PureState::basis(4, 0).unwrap(), &[1.0]).is_err());
    }

    #[test]
    fn maximally_mixed_is_stationary() {
        let sd = spectral_of(&ising(4, 0.5));
        let rho0 = DensityMatrix::maximally_mixed(16).unwrap();
        for rho in evolve_density(&sd, &rho0, &[0.0, 1.3, 7.0]).unwrap() {
            assert!(max_abs(&rho, &rho0) < 1e-12);
        }
    }

    fn max_abs(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
        crate::operators::max_abs_diff(a.matrix(), b.matrix())
    }

    #[test]
    fn density_evolution_matches_pure_evolution() {
        let sd = spectral_of(&ising(4, 0.5));
        let psi0 = random_product_state(4, &mut rng::stream(6, &[])).unwrap();
        let times = [0.0, 0.7, 3.1, 12.0];
        let pure = evolve_state(&sd, &psi0, &times).unwrap();
        let mixed = evolve_density(&sd, &psi0.density(), &times).unwrap();
        for (p, m) in pure.iter().zip(&mixed) {
            assert!(max_abs(&p.density(), m) < 1e-10);
        }
        let rho0 = random_density(16, 3);
        let p0 = rho0.purity();
        for rho in evolve_density(&sd, &rho0, &times).unwrap() {
            assert!((rho.trace() - 1.0).abs() < 1e-10);
            assert!(hermiticity_residual(rho.matrix()) < 1e-10);
            assert!((rho.purity() - p0).abs() < 1e-10);
        }
    }

    #[test]
    fn partial_trace_examples() {
        let plus = [c(1.0, 0.0), c(1.0, 0.0)].map(|a| a / 2f64.sqrt());
        let rest = random_product_state(2, &mut rng::stream(1, &[])).unwrap();
        let psi = PureState::product(&[plus]).unwrap().tensor(&rest);
        let rho = reduce_to_probe(&psi, 3).unwrap();
        assert!((rho.get(0, 1).re - 0.5).abs() < 1e-12);
        assert!((rho.purity() - 1.0).abs() < 1e-12);

        let s = 1.0 / 2f64.sqrt();
        let bell = PureState::new(vec![c(s, 0.0), ZERO, ZERO, c(s, 0.0)]).unwrap();
        let rho = reduce_to_probe(&bell, 2).unwrap();
        assert!((rho.purity() - 0.5).abs() < 1e-12);
        assert!(rho.get(0, 1).norm() < 1e-15);

        assert!(matches!(reduce_to_probe(&bell, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn partial_trace_matches_index_sum_oracle() {
        for l in 1..=4 {
            for seed in 0..5 {
                let psi = random_state(1 << l, 100 + seed);
                let rho = random_density(1 << l, 200 + seed);
                for (state, full) in [(reduce_to_probe(&psi, l).unwrap(), psi.density()), (reduce_to_probe(&rho, l).unwrap(), rho.clone())] {
                    let oracle = brute_partial_trace(&full, l);
                    for a in 0..2 {
                        for b in 0..2 {
                            assert!((state.get(a, b) - oracle[a][b]).norm() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn bloch_examples() {
        let (r, p) = bloch_and_purity(&DensityMatrix::maximally_mixed(2).unwrap()).unwrap();
        assert_eq!(r, [0.0; 3]);
        assert_eq!(p, 0.5);
        let (r, p) = bloch_and_purity(&PureState::basis(2, 0).unwrap().density()).unwrap();
        assert_eq!(r, [0.0, 0.0, 1.0]);
        assert_eq!(p, 1.0);
        // |+i⟩ has r = (0, 1, 0).
        let s = 1.0 / 2f64.sqrt();
        let (r, _) = bloch_and_purity(&PureState::new(vec![c(s, 0.0), c(0.0, s)]).unwrap().density()).unwrap();
        assert!((r[1] - 1.0).abs() < 1e-15 && r[0].abs() < 1e-15);
    }

    #[test]
    fn bloch_identity_on_random_mixed_qubits() {
        for seed in 0..20 {
            let rho = random_density(2, seed);
            let (r, p) = bloch_and_purity(&rho).unwrap();
            let r2: f64 = r.iter().map(|x| x * x).sum();
            assert!((p - 0.5 * (1.0 + r2)).abs() < 1e-12);
            assert!((p - rho.purity()).abs() < 1e-12);
        }
    }

    #[test]
    fn density_validation() {
        let bad_trace = Mat::from_fn(2, 2, |i, j| c(if i == j { 0.6 } else { 0.0 }, 0.0));
        assert!(DensityMatrix::new(bad_trace).is_err());
        let negative = Mat::from_fn(2, 2, |i, j| c(if i == j { [1.2, -0.2][i] } else { 0.0 }, 0.0));
        assert!(DensityMatrix::new(negative).is_err());
        assert!(PureState::new(vec![c(1.0, 0.0), c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn trajectory_satisfies_bloch_identity() {
        let sd = spectral_of(&ising(6, 0.5));
        let psi0 = random_product_state(6, &mut rng::stream(7, &[])).unwrap();
        let times = time_grid(20.0, 0.1).unwrap();
        let traj = probe_trajectory(&sd, &psi0, &times).unwrap();
        let states = evolve_state(&sd, &psi0, &times).unwrap();
        for (k, s) in states.iter().enumerate() {
            let (r, p) = bloch_and_purity(&reduce_to_probe(s, 6).unwrap()).unwrap();
            assert!((p - traj.purity[k]).abs() < 1e-12);
            let r2: f64 = traj.bloch[k].iter().map(|x| x * x).sum();
            assert!((traj.purity[k] - 0.5 * (1.0 + r2)).abs() < 1e-10);
            assert!(traj.purity[k] >= 0.5 - 1e-12 && traj.purity[k] <= 1.0 + 1e-12);
            for a in 0..3 {
                assert!((r[a] - traj.bloch[k][a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn time_average_examples() {
        let times = time_grid(1.0, 0.01).unwrap();
        assert_eq!(time_average(&times, &vec![0.7; times.len()], [0.0, 1.0]).unwrap(), 0.7);
        let avg = time_average(&times, &times, [0.0, 1.0]).unwrap();
        assert!((avg - 0.5).abs() < 1e-12);
        assert!(time_average(&times, &times, [0.5, 0.5]).is_err());
        assert!(time_average(&times, &times, [0.0, 2.0]).is_err());
        let sub = time_average(&times, &times, [0.5, 1.0]).unwrap();
        assert!((sub - 0.75).abs() < 1e-12);
    }

    #[test]
    fn time_average_converges_under_refinement() {
        let sd = spectral_of(&ising(6, 0.5));
        let psi0 = random_product_state(6, &mut rng::stream(8, &[])).unwrap();
        let avg = |dt| {
            let traj = probe_trajectory(&sd, &psi0, &time_grid(50.0, dt).unwrap()).unwrap();
            time_averaged_purity(&traj, [0.0, 50.0]).unwrap()
        };
        assert!((avg(0.1) - avg(0.05)).abs() < 1e-4);
    }

    #[test]
    fn single_realization_ensemble_matches_direct_call() {
        let model = ising(4, 0.5);
        let cfg = EnsembleConfig::new(1, 20.0, 0.1);
        let ens = ensemble_averaged_purity(&model, &cfg, 11).unwrap();
        let (_, psi0) = realization(&model, SamplingMeasure::SphereUniform, 11, 0).unwrap();
        let traj = probe_trajectory(&spectral_of(&model), &psi0, &time_grid(20.0, 0.1).unwrap()).unwrap();
        assert_eq!(ens.mean, time_averaged_purity(&traj, [0.0, 20.0]).unwrap());
        assert_eq!(ens.std, 0.0);
    }

    #[test]
    fn chaotic_purity_is_lower_than_integrable() {
        let cfg = EnsembleConfig::new(50, 50.0, 0.1);
        let chaotic = ensemble_averaged_purity(&ising(6, 0.5), &cfg, 1).unwrap();
        let regular = ensemble_averaged_purity(&ising(6, 0.01), &cfg, 1).unwrap();
        assert!(chaotic.mean < regular.mean);
        assert!((chaotic.mean - 0.5).abs() < 0.1, "{}", chaotic.mean);
    }

    #[test]
    fn ensemble_spread_shrinks_with_realizations() {
        // Standard error of the mean over disjoint blocks: N=10 vs N=40.
        let model = ising(4, 0.5);
        let spread = |n: usize| {
            let means: Vec<f64> = (0..12)
                .map(|b| ensemble_averaged_purity(&model, &EnsembleConfig::new(n, 20.0, 0.1), 1000 + b).unwrap().mean)
                .collect();
            fluctuations(&means).unwrap()
        };
        let ratio = spread(10) / spread(40);
        // Expected 2; twelve blocks leave roughly ±25% scatter on each spread.
        assert!(ratio > 1.2 && ratio < 3.5, "{ratio}");
    }

    #[test]
    fn stochastic_ensembles_redraw_disorder() {
        let mut model = ising(4, 0.5);
        model.params = crate::operators::ModelParams::IsingLongTrans {
            h_x: 1.0,
            h_z: 0.5,
            couplings: vec![1.0; 3],
            coupling_range: Some([0.5, 1.5]),
        };
        let (a, _) = realization(&model, SamplingMeasure::SphereUniform, 3, 0).unwrap();
        let (b, _) = realization(&model, SamplingMeasure::SphereUniform, 3, 1).unwrap();
        assert_ne!(a, b);
        let ens = ensemble_averaged_purity(&model, &EnsembleConfig::new(4, 10.0, 0.1), 3).unwrap();
        assert_eq!(ens.values.len(), 4);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_curve(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(matches!(normalize_curve(&[2.0, 2.0]), Err(Error::DegenerateRange(_))));
        assert!(normalize_curve(&[2.0]).is_err());
    }

    #[test]
    fn fluctuation_examples() {
        assert_eq!(fluctuations(&[0.3; 10]).unwrap(), 0.0);
        let alt: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        assert_eq!(fluctuations(&alt).unwrap(), 0.5);
        assert!(fluctuations(&[1.0]).is_err());
    }

    #[test]
    fn chaotic_fluctuations_are_smaller() {
        let times = time_grid(100.0, 0.1).unwrap();
        let mean_delta = |h_z| {
            let sd = spectral_of(&ising(8, h_z));
            (0..5)
                .map(|i| {
                    let (_, psi0) = realization(&ising(8, h_z), SamplingMeasure::SphereUniform, 4, i).unwrap();
                    probe_trajectory(&sd, &psi0, &times).unwrap().window_fluctuations([50.0, 100.0]).unwrap()[0]
                })
                .sum::<f64>()
        };
        assert!(mean_delta(0.5) < mean_delta(0.0));
    }

    #[test]
    fn gibbs_limits() {
        let model = ising(4, 0.5);
        let rho = gibbs_environment_state(&model, 0.0).unwrap();
        assert!(max_abs(&rho, &DensityMatrix::maximally_mixed(8).unwrap()) < 1e-14);

        let env = eigendecompose(&build_hamiltonian(&model.environment().unwrap()).unwrap(), true).unwrap();
        let gap = env.eigenvalues()[1] - env.eigenvalues()[0];
        assert!(gap > 1e-3);
        let rho = gibbs_environment_state(&model, 30.0 / gap).unwrap();
        let ground = PureState::from_trusted(env.eigenvectors().unwrap().col(0).iter().copied().collect());
        assert!(max_abs(&rho, &ground.density()) < 1e-8);
        assert!(gibbs_environment_state(&model, -1.0).is_err());
        assert!(gibbs_environment_state(&model, 1e300).is_ok());
    }

    #[test]
    fn two_level_gibbs_closed_form() {
        // Environment of a 2-site Ising chain with J=0, h_x=0, h_z=1 is σ^z on one site.
        let model = SpinModel::ising(2, 0.0, 1.0, vec![0.0]).unwrap();
        let rho = gibbs_environment_state(&model, 1.0).unwrap();
        let e = std::f64::consts::E;
        let z = e + 1.0 / e;
        assert!((rho.get(0, 0).re - 1.0 / e / z).abs() < 1e-14);
        assert!((rho.get(1, 1).re - e / z).abs() < 1e-14);
        assert!(rho.get(0, 1).norm() < 1e-15);
    }

    #[test]
    fn channel_reproduces_pure_environment() {
        let model = ising(5, 0.5);
        let sd = spectral_of(&model);
        let mut r = rng::stream(21, &[]);
        let probe = random_qubit(SamplingMeasure::SphereUniform, &mut r);
        let env = random_product_state(4, &mut r).unwrap();
        let times = time_grid(5.0, 0.25).unwrap();
        let env_col = Mat::from_fn(16, 1, |i, _| env.amplitudes()[i]);
        let channel = ProbeChannel::new(&sd, env_col.as_ref(), &[1.0], &times).unwrap();
        let via_channel = channel.trajectory(qubit_bloch(probe));
        let psi0 = PureState::product(&[probe]).unwrap().tensor(&env);
        let direct = probe_trajectory(&sd, &psi0, &times).unwrap();
        for k in 0..times.len() {
            assert!((via_channel.purity[k] - direct.purity[k]).abs() < 1e-12);
            for a in 0..3 {
                assert!((via_channel.bloch[k][a] - direct.bloch[k][a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gibbs_channel_matches_density_evolution() {
        let model = ising(4, 0.5);
        let sd = spectral_of(&model);
        let times = [0.0, 0.9, 4.0];
        let n = [0.6, -0.48, 0.64];
        for beta in [0.0, 0.7] {
            let channel = ProbeChannel::gibbs(&model, beta, &times).unwrap();
            let traj = channel.trajectory(n);
            let rho01 = c(0.5 * n[0], -0.5 * n[1]);
            let probe = DensityMatrix::new(Mat::from_fn(2, 2, |i, j| match (i, j) {
                (0, 0) => c(0.5 * (1.0 + n[2]), 0.0),
                (1, 1) => c(0.5 * (1.0 - n[2]), 0.0),
                (0, 1) => rho01,
                _ => rho01.conj(),
            }))
            .unwrap();
            let rho0 = probe.tensor(&gibbs_environment_state(&model, beta).unwrap());
            for (k, rho) in evolve_density(&sd, &rho0, &times).unwrap().iter().enumerate() {
                let (r, p) = bloch_and_purity(&reduce_to_probe(rho, 4).unwrap()).unwrap();
                assert!((p - traj.purity[k]).abs() < 1e-12);
                for a in 0..3 {
                    assert!((r[a] - traj.bloch[k][a]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn eigenbasis_expansion_matches_propagation() {
        let model = ising(4, 0.5);
        let sd = spectral_of(&model);
        let psi0 = random_product_state(4, &mut rng::stream(12, &[])).unwrap();
        let exp = bloch_eigenbasis_expansion(&sd, &psi0).unwrap();
        let times: Vec<f64> = (0..20).map(|k| 0.37 * k as f64).collect();
        let traj = probe_trajectory(&sd, &psi0, &times).unwrap();
        for (k, &t) in times.iter().enumerate() {
            let r = exp.evaluate(t);
            for a in 0..3 {
                assert!((r[a] - traj.bloch[k][a]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn eigenstate_expansion_has_no_oscillations() {
        let sd = spectral_of(&ising(3, 0.5));
        let psi0 = PureState::normalized(sd.eigenvectors().unwrap().col(2).iter().copied().collect()).unwrap();
        let exp = bloch_eigenbasis_expansion(&sd, &psi0).unwrap();
        assert!(exp.oscillatory.is_empty());
        let r0 = bloch_and_purity(&reduce_to_probe(&psi0, 3).unwrap()).unwrap().0;
        for a in 0..3 {
            assert!((exp.evaluate(0.0)[a] - r0[a]).abs() < 1e-12);
            assert!((exp.evaluate(13.0)[a] - r0[a]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn normalized_curves_span_unit_interval(v in proptest::collection::vec(-5.0f64..5.0, 2..30)) {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                let n = normalize_curve(&v).unwrap();
                prop_assert!(n.iter().all(|x| (0.0..=1.0).contains(x)));
                prop_assert!(n.contains(&0.0) && n.contains(&1.0));
                let twice = normalize_curve(&n).unwrap();
                prop_assert!(twice.iter().zip(&n).all(|(a, b)| (a - b).abs() < 1e-15));
            }
        }

        #[test]
        fn purity_stays_in_qubit_bounds(seed in 0u64..1000, t in 0.0f64..40.0) {
            let model = ising(3, 0.3);
            let sd = spectral_of(&model);
            let psi0 = random_product_state(3, &mut rng::stream(seed, &[])).unwrap();
            let traj = probe_trajectory(&sd, &psi0, &[t]).unwrap();
            let p = traj.purity[0];
            prop_assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&p));
            let r2: f64 = traj.bloch[0].iter().map(|x| x * x).sum();
            prop_assert!((p - 0.5 * (1.0 + r2)).abs() < 1e-10);
        }
    }
}
