//! Piecewise-constant control `H(t) = H₀ + λ(t) H_c` and multi-start
//! fidelity maximization.

use std::collections::HashMap;

use faer::{c64, Mat, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{reduce_to_leading_sites, PureState};
use crate::error::{Error, Result};
use crate::operators::{build_hamiltonian, site_operator, Axis, HermitianOperator, SpinConvention, SpinModel};
use crate::parallel;
use crate::rng;
use crate::spectral::{eigendecompose, SpectralData};

/// Central finite-difference step on each `λ_l`.
pub const FD_STEP: f64 = 1e-6;
/// Relative fidelity change that ends a local search.
pub const CONVERGENCE_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 200;
/// Amplitudes closer than this share one cached step propagator.
pub const LAMBDA_QUANTUM: f64 = 1e-12;
pub const DEFAULT_BOUNDS: [f64; 2] = [-2.0, 2.0];
pub const DEFAULT_STEPS: usize = 20;

const CACHE_LIMIT: usize = 4096;
const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

/// Drift, control, target and time discretization of one control task.
#[derive(Clone, Debug)]
pub struct ControlProblem {
    pub model: SpinModel,
    pub control: HermitianOperator,
    /// Target on the leading `log2(dim)` sites of the chain.
    pub target: PureState,
    pub horizon: f64,
    pub steps: usize,
    pub bounds: [f64; 2],
    pub psi0: PureState,
}

impl ControlProblem {
    /// Control `σ^z` on the probe, `DEFAULT_STEPS` steps, `DEFAULT_BOUNDS`.
    pub fn new(model: SpinModel, target: PureState, horizon: f64, psi0: PureState) -> Result<Self> {
        let control = site_operator(Axis::Z, 1, model.length, SpinConvention::Pauli)?;
        let problem = ControlProblem {
            model,
            control,
            target,
            horizon,
            steps: DEFAULT_STEPS,
            bounds: DEFAULT_BOUNDS,
            psi0,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_steps(mut self, steps: usize) -> Result<Self> {
        self.steps = steps;
        self.validate()?;
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: [f64; 2]) -> Result<Self> {
        self.bounds = bounds;
        self.validate()?;
        Ok(self)
    }

    pub fn with_control(mut self, control: HermitianOperator) -> Result<Self> {
        self.control = control;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.model.dim();
        if self.steps == 0 {
            return Err(Error::argument("control needs at least one time step"));
        }
        let [lo, hi] = self.bounds;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::argument(format!("invalid amplitude bounds [{lo}, {hi}]")));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::argument("control horizon must be positive"));
        }
        if self.control.dim() != dim || self.psi0.dim() != dim {
            return Err(Error::argument("control operator and initial state must match the chain"));
        }
        self.target_sites()?;
        if (self.target.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::argument("target state is not normalized"));
        }
        Ok(())
    }

    /// Number of leading sites the target lives on.
    pub fn target_sites(&self) -> Result<usize> {
        let d = self.target.dim();
        if !d.is_power_of_two() || d < 2 || d > self.model.dim() {
            return Err(Error::argument(format!(
                "target dimension {d} does not fit a {}-site chain",
                self.model.length
            )));
        }
        Ok(d.trailing_zeros() as usize)
    }

    pub fn step_duration(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// Probe `|1⟩` (spin down), the population-transfer target.
pub fn transfer_target() -> PureState {
    PureState::basis(2, 1).expect("valid basis state")
}

/// `(|00⟩ + |11⟩)/√2` on sites 1 and 2.
pub fn bell_target() -> PureState {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    PureState::new(vec![c64::new(s, 0.0), ZERO, ZERO, c64::new(s, 0.0)]).expect("normalized")
}

/// `Tr(ρ_sub |t⟩⟨t|)` with `ρ_sub` the state of the target's sites.
pub fn fidelity(psi_t: &PureState, problem: &ControlProblem) -> Result<f64> {
    let sites = problem.target_sites()?;
    if psi_t.dim() != problem.model.dim() {
        return Err(Error::argument("final state does not match the chain"));
    }
    if sites == problem.model.length {
        return Ok(problem.target.inner(psi_t).norm_sqr().min(1.0));
    }
    let rho = reduce_to_leading_sites(psi_t, problem.model.length, sites)?;
    let t = problem.target.amplitudes();
    let mut f = ZERO;
    for j in 0..t.len() {
        for i in 0..t.len() {
            f += t[i].conj() * rho.get(i, j) * t[j];
        }
    }
    Ok(f.re.clamp(0.0, 1.0))
}

/// Step propagators `e^{−i(H₀ + λH_c)Δt}` memoized by quantized `λ`.
struct Propagator<'a> {
    drift: HermitianOperator,
    control: &'a HermitianOperator,
    dt: f64,
    cache: HashMap<i64, SpectralData>,
    evaluations: usize,
}

impl<'a> Propagator<'a> {
    fn new(problem: &'a ControlProblem) -> Result<Self> {
        Ok(Propagator {
            drift: build_hamiltonian(&problem.model)?,
            control: &problem.control,
            dt: problem.step_duration(),
            cache: HashMap::new(),
            evaluations: 0,
        })
    }

    fn spectral(&mut self, lambda: f64) -> Result<&SpectralData> {
        let key = (lambda / LAMBDA_QUANTUM).round() as i64;
        if !self.cache.contains_key(&key) {
            if self.cache.len() >= CACHE_LIMIT {
                self.cache.clear();
            }
            let h = self.drift.add_scaled(self.control, lambda)?;
            self.cache.insert(key, eigendecompose(&h, true)?);
        }
        Ok(&self.cache[&key])
    }

    /// `e^{∓iHΔt} X`, sign `+1` forward, `−1` backward.
    fn apply(&mut self, lambda: f64, x: MatRef<'_, c64>, sign: f64) -> Result<Mat<c64>> {
        let dt = self.dt;
        let sd = self.spectral(lambda)?;
        let v = sd.require_vectors()?;
        let e = sd.eigenvalues();
        let w = v.adjoint() * x;
        let phased = Mat::from_fn(w.nrows(), w.ncols(), |n, k| {
            w[(n, k)] * c64::from_polar(1.0, -sign * e[n] * dt)
        });
        Ok(v * &phased)
    }

    fn forward(&mut self, lambdas: &[f64], psi0: &PureState) -> Result<Vec<c64>> {
        let mut x = column(psi0.amplitudes());
        for &l in lambdas {
            x = self.apply(l, x.as_ref(), 1.0)?;
        }
        Ok(x.col_as_slice(0).to_vec())
    }
}

fn column(v: &[c64]) -> Mat<c64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

fn check_lambdas(problem: &ControlProblem, lambdas: &[f64]) -> Result<()> {
    if lambdas.len() != problem.steps {
        return Err(Error::argument(format!(
            "expected {} amplitudes, got {}",
            problem.steps,
            lambdas.len()
        )));
    }
    let [lo, hi] = problem.bounds;
    if let Some((l, x)) = lambdas.iter().enumerate().find(|(_, x)| !(lo..=hi).contains(*x)) {
        return Err(Error::argument(format!(
            "amplitude {x} at step {} is outside [{lo}, {hi}]",
            l + 1
        )));
    }
    Ok(())
}

/// `ψ(T) = Π_l e^{−i(H₀ + λ_l H_c)Δt} ψ0`, last step leftmost.
pub fn propagate_piecewise(problem: &ControlProblem, lambdas: &[f64]) -> Result<PureState> {
    problem.validate()?;
    check_lambdas(problem, lambdas)?;
    let mut prop = Propagator::new(problem)?;
    Ok(PureState::from_trusted(prop.forward(lambdas, &problem.psi0)?))
}

/// Fidelity together with its finite-difference gradient in `λ`.
///
/// Writing `F = Σ_k |⟨χ_k|ψ(T)⟩|²` with `χ_k = |t⟩ ⊗ |e_k⟩`, the costates
/// `χ_k` are propagated backwards once, so each perturbed step costs two
/// step applications and a projection.
struct Objective<'a> {
    problem: &'a ControlProblem,
    prop: Propagator<'a>,
    /// Columns `|t⟩ ⊗ |e_k⟩`.
    projector: Mat<c64>,
}

impl<'a> Objective<'a> {
    fn new(problem: &'a ControlProblem) -> Result<Self> {
        let sites = problem.target_sites()?;
        let env = 1usize << (problem.model.length - sites);
        let t = problem.target.amplitudes();
        let projector = Mat::from_fn(problem.model.dim(), env, |row, k| {
            if row % env == k {
                t[row / env]
            } else {
                ZERO
            }
        });
        Ok(Objective {
            problem,
            prop: Propagator::new(problem)?,
            projector,
        })
    }

    fn overlap(costates: MatRef<'_, c64>, psi: &[c64]) -> f64 {
        (0..costates.ncols())
            .map(|k| {
                costates
                    .col(k)
                    .iter()
                    .zip(psi)
                    .map(|(a, b)| a.conj() * b)
                    .sum::<c64>()
                    .norm_sqr()
            })
            .sum()
    }

    fn value(&mut self, lambdas: &[f64]) -> Result<f64> {
        self.prop.evaluations += 1;
        let psi = self.prop.forward(lambdas, &self.problem.psi0)?;
        Ok(Self::overlap(self.projector.as_ref(), &psi).clamp(0.0, 1.0))
    }

    fn value_and_gradient(&mut self, lambdas: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = lambdas.len();
        // states[l] = ψ after l steps.
        let mut states = Vec::with_capacity(n + 1);
        states.push(column(self.problem.psi0.amplitudes()));
        for &l in lambdas {
            let next = self.prop.apply(l, states.last().expect("non-empty").as_ref(), 1.0)?;
            states.push(next);
        }
        let f = Self::overlap(self.projector.as_ref(), states[n].col_as_slice(0));
        self.prop.evaluations += 1;
        let mut grad = vec![0.0; n];
        // costate holds U_n…U_{l+2}† applied to the projector columns.
        let mut costate = self.projector.clone();
        for l in (0..n).rev() {
            let mut side = [0.0; 2];
            for (s, h) in side.iter_mut().zip([FD_STEP, -FD_STEP]) {
                let stepped = self.prop.apply(lambdas[l] + h, states[l].as_ref(), 1.0)?;
                *s = Self::overlap(costate.as_ref(), stepped.col_as_slice(0));
            }
            self.prop.evaluations += 2;
            grad[l] = (side[0] - side[1]) / (2.0 * FD_STEP);
            costate = self.prop.apply(lambdas[l], costate.as_ref(), -1.0)?;
        }
        Ok((f.clamp(0.0, 1.0), grad))
    }
}

/// Outcome of a multi-start optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlResult {
    pub best_lambda: Vec<f64>,
    pub best_fidelity: f64,
    /// Start 0 is the zero field; starts `1..=n_seeds` are random.
    pub seed_fidelities: Vec<f64>,
    pub evaluations: usize,
}

/// Box constraints via `λ = c + w sin(u)`.
#[derive(Clone, Copy)]
struct BoxMap {
    center: f64,
    half_width: f64,
}

impl BoxMap {
    fn lambda(&self, u: f64) -> f64 {
        (self.center + self.half_width * u.sin()).clamp(self.center - self.half_width, self.center + self.half_width)
    }

    fn inverse(&self, lambda: f64) -> f64 {
        if self.half_width == 0.0 {
            0.0
        } else {
            ((lambda - self.center) / self.half_width).clamp(-1.0, 1.0).asin()
        }
    }

    fn derivative(&self, u: f64) -> f64 {
        self.half_width * u.cos()
    }
}

struct LocalResult {
    lambdas: Vec<f64>,
    fidelity: f64,
    evaluations: usize,
}

/// BFGS with Armijo backtracking on `1 − F(λ(u))`.
fn local_search(problem: &ControlProblem, start: Vec<f64>) -> Result<LocalResult> {
    let map = BoxMap {
        center: 0.5 * (problem.bounds[0] + problem.bounds[1]),
        half_width: 0.5 * (problem.bounds[1] - problem.bounds[0]),
    };
    let mut obj = Objective::new(problem)?;
    let n = start.len();
    let to_lambda = |u: &[f64]| u.iter().map(|&x| map.lambda(x)).collect::<Vec<_>>();
    let mut u: Vec<f64> = start.iter().map(|&l| map.inverse(l)).collect();
    if map.half_width == 0.0 {
        let lambdas = to_lambda(&u);
        let fidelity = obj.value(&lambdas)?;
        return Ok(LocalResult { lambdas, fidelity, evaluations: obj.prop.evaluations });
    }
    let gradient_u = |obj: &mut Objective, u: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (f, g) = obj.value_and_gradient(&to_lambda(u))?;
        // Minimize 1 − F.
        Ok((1.0 - f, g.iter().zip(u).map(|(g, &x)| -g * map.derivative(x)).collect()))
    };
    let (mut cost, mut grad) = gradient_u(&mut obj, &u)?;
    let mut hinv = identity(n);
    for _ in 0..MAX_ITERATIONS {
        if cost <= 1e-14 || norm(&grad) == 0.0 {
            break;
        }
        let mut dir = matvec(&hinv, &grad).iter().map(|x| -x).collect::<Vec<_>>();
        let mut slope = dot(&dir, &grad);
        if !(slope < 0.0) {
            hinv = identity(n);
            dir = grad.iter().map(|x| -x).collect();
            slope = dot(&dir, &grad);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = u.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
            let trial_cost = 1.0 - obj.value(&to_lambda(&trial))?;
            if trial_cost <= cost + 1e-4 * step * slope {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else { break };
        let (next_cost, next_grad) = gradient_u(&mut obj, &next)?;
        let s: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            bfgs_update(&mut hinv, &s, &y, sy);
        }
        let (f_old, f_new) = (1.0 - cost, 1.0 - next_cost);
        u = next;
        cost = next_cost;
        grad = next_grad;
        if (f_new - f_old).abs() <= CONVERGENCE_TOL * f_new.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let lambdas = to_lambda(&u);
    Ok(LocalResult {
        lambdas,
        fidelity: 1.0 - cost,
        evaluations: obj.prop.evaluations,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// `H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let rho = 1.0 / sy;
    let hy = matvec(h, y);
    let yhy = dot(y, &hy);
    let n = s.len();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Best of `n_seeds` random starts plus the zero field (clamped into bounds).
///
/// Start `s ≥ 1` draws `λ` uniformly in bounds from stream `(seed, s)`.
pub fn optimize(problem: &ControlProblem, n_seeds: usize, seed: u64) -> Result<ControlResult> {
    problem.validate()?;
    if n_seeds == 0 {
        return Err(Error::argument("at least one random start is required"));
    }
    let [lo, hi] = problem.bounds;
    let runs = parallel::try_map(n_seeds + 1, |s| {
        let start = if s == 0 {
            vec![0.0f64.clamp(lo, hi); problem.steps]
        } else {
            let mut r = rng::stream(seed, &[s as u64]);
            (0..problem.steps).map(|_| lo + (hi - lo) * r.random::<f64>()).collect()
        };
        local_search(problem, start)
    })?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.fidelity > runs[best].fidelity {
            best = i;
        }
    }
    Ok(ControlResult {
        best_lambda: runs[best].lambdas.clone(),
        best_fidelity: runs[best].fidelity,
        seed_fidelities: runs.iter().map(|r| r.fidelity).collect(),
        evaluations: runs.iter().map(|r| r.evaluations).sum(),
    })
}

/// Optimal fidelity and η at one grid value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityEtaRow {
    pub param: f64,
    pub fidelity: f64,
    pub eta: f64,
}

/// Joins `(param, F)` with `(param, η)` on an identical grid, in grid order.
pub fn fidelity_vs_eta(fidelity: &[(f64, f64)], eta: &[(f64, f64)]) -> Result<Vec<FidelityEtaRow>> {
    if fidelity.len() != eta.len() {
        return Err(Error::argument(format!(
            "grid lengths differ: {} fidelities vs {} η values",
            fidelity.len(),
            eta.len()
        )));
    }
    fidelity
        .iter()
        .zip(eta)
        .map(|(&(p, f), &(q, e))| {
            if (p - q).abs() > 1e-12 * p.abs().max(q.abs()).max(1.0) {
                return Err(Error::argument(format!("grid mismatch: {p} vs {q}")));
            }
            Ok(FidelityEtaRow {
                param: p,
                fidelity: f,
                eta: e,
            })
        })
        .collect()
}
