//! Browser bindings for three interactive views of a short Ising chain:
//! a probe trajectory, the normalized purity curve, and level-spacing ratios.
//!
//! The plain functions carry the logic and are tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors. Flat `Vec<f64>` results
//! reach JavaScript as `Float64Array`s with the stride given per function.

use spinchaos::dynamics::{self, EnsembleConfig};
use spinchaos::operators::{build_hamiltonian, SpinModel};
use spinchaos::spectral::{self, eigendecompose};
use spinchaos::symmetry::{sector_hamiltonian, SectorPolicy};
use spinchaos::{rng, Error, Result};
use wasm_bindgen::prelude::*;

/// Longest chain the page accepts; keeps a click under a second or so.
pub const MAX_LENGTH: usize = 10;

fn check_length(length: usize) -> Result<()> {
    if !(2..=MAX_LENGTH).contains(&length) {
        return Err(Error::Argument(format!("chain length must be between 2 and {MAX_LENGTH}")));
    }
    Ok(())
}

/// One random-product-state trajectory; rows of `[t, r_x, r_y, r_z, P]`.
pub fn trajectory(length: usize, h_x: f64, h_z: f64, horizon: f64, seed: u64) -> Result<Vec<f64>> {
    check_length(length)?;
    let model = SpinModel::ising_uniform(length, h_x, h_z, 1.0)?;
    let sd = eigendecompose(&build_hamiltonian(&model)?, true)?;
    let psi0 = dynamics::random_product_state(length, &mut rng::stream(seed, &[0]))?;
    let times = dynamics::time_grid(horizon, horizon / 400.0)?;
    let traj = dynamics::probe_trajectory(&sd, &psi0, &times)?;
    Ok(traj
        .times
        .iter()
        .zip(&traj.bloch)
        .zip(&traj.purity)
        .flat_map(|((&t, r), &p)| [t, r[0], r[1], r[2], p])
        .collect())
}

/// Time-averaged purity over `h_z ∈ [0.01, 1.5]`; rows of `[h_z, mean, normalized]`.
pub fn purity_curve(length: usize, h_x: f64, points: usize, realizations: usize, seed: u64) -> Result<Vec<f64>> {
    check_length(length)?;
    if points < 2 || realizations == 0 {
        return Err(Error::Argument("need at least two points and one realization".into()));
    }
    let cfg = EnsembleConfig::new(realizations, 50.0, 0.1);
    let grid: Vec<f64> = (0..points)
        .map(|i| 0.01 + (1.5 - 0.01) * i as f64 / (points - 1) as f64)
        .collect();
    let means = grid
        .iter()
        .map(|&h_z| {
            let model = SpinModel::ising_uniform(length, h_x, h_z, 1.0)?;
            let seed = rng::derive_seed(seed, &[rng::value_key(h_z)]);
            Ok(dynamics::ensemble_averaged_purity(&model, &cfg, seed)?.mean)
        })
        .collect::<Result<Vec<f64>>>()?;
    let norm = dynamics::normalize_curve(&means)?;
    Ok(grid
        .iter()
        .zip(&means)
        .zip(&norm)
        .flat_map(|((&h, &m), &n)| [h, m, n])
        .collect())
}

/// `[η, mean r̃, r̃_1, r̃_2, …]` for the odd reflection sector.
pub fn level_ratios(length: usize, h_x: f64, h_z: f64) -> Result<Vec<f64>> {
    check_length(length)?;
    let model = SpinModel::ising_uniform(length, h_x, h_z, 1.0)?;
    let h = sector_hamiltonian(&model, &SectorPolicy::Odd)?;
    let stats = spectral::ratio_statistics(eigendecompose(&h, false)?.eigenvalues())?;
    let mean = stats.mean();
    let mut out = vec![spectral::eta_from_mean_ratio(mean), mean];
    out.extend_from_slice(&stats.ratios);
    Ok(out)
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = trajectory)]
pub fn trajectory_js(length: usize, h_x: f64, h_z: f64, horizon: f64, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    trajectory(length, h_x, h_z, horizon, seed).map_err(js)
}

#[wasm_bindgen(js_name = purityCurve)]
pub fn purity_curve_js(
    length: usize,
    h_x: f64,
    points: usize,
    realizations: usize,
    seed: u64,
) -> std::result::Result<Vec<f64>, JsError> {
    purity_curve(length, h_x, points, realizations, seed).map_err(js)
}

#[wasm_bindgen(js_name = levelRatios)]
pub fn level_ratios_js(length: usize, h_x: f64, h_z: f64) -> std::result::Result<Vec<f64>, JsError> {
    level_ratios(length, h_x, h_z).map_err(js)
}
