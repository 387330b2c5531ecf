//! Chain-reversal parity and total-`S^z` sectors.
//!
//! Sector bases are sparse (each vector touches one or two computational
//! states) and enumerated by ascending basis index, so projected matrices are
//! reproducible bit for bit.

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{build_hamiltonian, checked_dim, HermitianOperator, SpinModel, DEFAULT_DIM_CAP};

/// Commutator norm above which a symmetry counts as broken.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

/// Which block of the Hamiltonian a spectral measurement uses.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectorPolicy {
    /// No symmetry reduction.
    Full,
    Even,
    Odd,
    /// Fixed number of up spins.
    Magnetization { up: usize },
    /// Fixed number of up spins, then a parity block inside it.
    Composed { up: usize, parity: Parity },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SectorLabel {
    Parity(Parity),
    Magnetization(usize),
    Composed { up: usize, parity: Parity },
}

/// Sparse orthonormal basis of one sector inside the `2^L` space.
#[derive(Clone, Debug)]
pub struct SectorBasis {
    label: SectorLabel,
    length: usize,
    vectors: Vec<Vec<(usize, f64)>>,
}

impl SectorBasis {
    pub fn label(&self) -> SectorLabel {
        self.label
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    /// Nonzero `(basis index, amplitude)` pairs of each vector.
    pub fn vectors(&self) -> &[Vec<(usize, f64)>] {
        &self.vectors
    }

    /// Basis vectors as the columns of a `2^L × dim` matrix.
    pub fn to_dense(&self) -> Mat<c64> {
        let mut m = Mat::<c64>::zeros(1 << self.length, self.dim());
        for (j, v) in self.vectors.iter().enumerate() {
            for &(b, a) in v {
                m[(b, j)] = c64::new(a, 0.0);
            }
        }
        m
    }

    /// For each computational state, the sector vector containing it and its amplitude.
    fn lookup(&self) -> Vec<Option<(usize, f64)>> {
        let mut table = vec![None; 1 << self.length];
        for (i, v) in self.vectors.iter().enumerate() {
            for &(b, a) in v {
                table[b] = Some((i, a));
            }
        }
        table
    }
}

/// Mirror image of basis index `b` under chain reversal.
#[inline]
pub fn reverse_bits(b: usize, length: usize) -> usize {
    if length == 0 {
        return 0;
    }
    b.reverse_bits() >> (usize::BITS as usize - length)
}

#[inline]
fn up_count(b: usize, length: usize) -> usize {
    length - b.count_ones() as usize
}

/// Permutation matrix `|b_1 … b_L⟩ → |b_L … b_1⟩`.
pub fn parity_operator(length: usize) -> Result<HermitianOperator> {
    if length < 2 {
        return Err(Error::argument("parity needs a chain of length >= 2"));
    }
    let dim = checked_dim(length, DEFAULT_DIM_CAP)?;
    let mut m = Mat::<c64>::zeros(dim, dim);
    for b in 0..dim {
        m[(reverse_bits(b, length), b)] = c64::new(1.0, 0.0);
    }
    HermitianOperator::new(m)
}

fn symmetrized(
    length: usize,
    parity: Parity,
    keep: impl Fn(usize) -> bool,
) -> Vec<Vec<(usize, f64)>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut vectors = Vec::new();
    for b in (0..1usize << length).filter(|&b| keep(b)) {
        let p = reverse_bits(b, length);
        match (p.cmp(&b), parity) {
            (std::cmp::Ordering::Equal, Parity::Even) => vectors.push(vec![(b, 1.0)]),
            (std::cmp::Ordering::Greater, Parity::Even) => vectors.push(vec![(b, s), (p, s)]),
            (std::cmp::Ordering::Greater, Parity::Odd) => vectors.push(vec![(b, s), (p, -s)]),
            _ => {}
        }
    }
    vectors
}

/// `Π = ±1` eigenspace built from `(|b⟩ ± Π|b⟩)/norm`.
pub fn parity_basis(length: usize, parity: Parity) -> Result<SectorBasis> {
    if length < 2 {
        return Err(Error::argument("parity needs a chain of length >= 2"));
    }
    checked_dim(length, usize::MAX >> 1)?;
    Ok(SectorBasis {
        label: SectorLabel::Parity(parity),
        length,
        vectors: symmetrized(length, parity, |_| true),
    })
}

/// Computational states with exactly `up` spins up.
pub fn magnetization_basis(length: usize, up: usize) -> Result<SectorBasis> {
    if up > length {
        return Err(Error::argument(format!("{up} up spins do not fit in {length} sites")));
    }
    Ok(SectorBasis {
        label: SectorLabel::Magnetization(up),
        length,
        vectors: (0..1usize << length)
            .filter(|&b| up_count(b, length) == up)
            .map(|b| vec![(b, 1.0)])
            .collect(),
    })
}

/// Parity block inside the `up`-spin sector.
pub fn composed_basis(length: usize, up: usize, parity: Parity) -> Result<SectorBasis> {
    if up > length {
        return Err(Error::argument(format!("{up} up spins do not fit in {length} sites")));
    }
    if length < 2 {
        return Err(Error::argument("parity needs a chain of length >= 2"));
    }
    Ok(SectorBasis {
        label: SectorLabel::Composed { up, parity },
        length,
        vectors: symmetrized(length, parity, |b| up_count(b, length) == up),
    })
}

/// `B† H B` for a dense `H` over the full space.
pub fn project(h: &HermitianOperator, basis: &SectorBasis) -> Result<HermitianOperator> {
    if h.dim() != 1 << basis.length {
        return Err(Error::argument(format!(
            "operator dimension {} does not match a {}-site chain",
            h.dim(),
            basis.length
        )));
    }
    let n = basis.dim();
    let mut m = Mat::<c64>::zeros(n, n);
    for (j, vj) in basis.vectors.iter().enumerate() {
        for (i, vi) in basis.vectors.iter().enumerate() {
            let mut acc = c64::new(0.0, 0.0);
            for &(a, x) in vi {
                for &(b, y) in vj {
                    acc += h.get(a, b) * (x * y);
                }
            }
            m[(i, j)] = acc;
        }
    }
    Ok(HermitianOperator::from_trusted(m))
}

/// `max |HΠ − ΠH|`, computed by permuting indices.
pub fn parity_residual(h: &HermitianOperator, length: usize) -> Result<f64> {
    if length < 2 || h.dim() != 1 << length {
        return Err(Error::argument("operator does not match the chain length"));
    }
    let mut r = 0.0f64;
    for b in 0..h.dim() {
        let pb = reverse_bits(b, length);
        for a in 0..h.dim() {
            let pa = reverse_bits(a, length);
            r = r.max((h.get(a, b) - h.get(pa, pb)).norm());
        }
    }
    Ok(r)
}

/// `max |[H, S^z_total]|`; the commutator is `H_ab (m_b − m_a)`.
pub fn magnetization_residual(h: &HermitianOperator, length: usize) -> Result<f64> {
    if h.dim() != 1 << length {
        return Err(Error::argument("operator does not match the chain length"));
    }
    let mut r = 0.0f64;
    for b in 0..h.dim() {
        let mb = up_count(b, length) as f64;
        for a in 0..h.dim() {
            let ma = up_count(a, length) as f64;
            r = r.max(h.get(a, b).norm() * (mb - ma).abs());
        }
    }
    Ok(r)
}

fn require(symmetry: &'static str, residual: f64) -> Result<()> {
    if residual > SYMMETRY_TOL {
        Err(Error::SymmetryViolation { symmetry, residual })
    } else {
        Ok(())
    }
}

/// `(H_even, H_odd)`, after checking `[H, Π] = 0`.
pub fn parity_sectors(
    h: &HermitianOperator,
    length: usize,
) -> Result<(HermitianOperator, HermitianOperator)> {
    require("parity", parity_residual(h, length)?)?;
    Ok((
        project(h, &parity_basis(length, Parity::Even)?)?,
        project(h, &parity_basis(length, Parity::Odd)?)?,
    ))
}

/// `H` restricted to states with `up` spins up, after checking `[H, S^z] = 0`.
pub fn sz_sector(h: &HermitianOperator, length: usize, up: usize) -> Result<HermitianOperator> {
    require("magnetization", magnetization_residual(h, length)?)?;
    project(h, &magnetization_basis(length, up)?)
}

/// Parity block of the `up`-spin sector; both symmetries are checked.
pub fn composed_sector(
    h: &HermitianOperator,
    length: usize,
    up: usize,
    parity: Parity,
) -> Result<HermitianOperator> {
    require("magnetization", magnetization_residual(h, length)?)?;
    require("parity", parity_residual(h, length)?)?;
    project(h, &composed_basis(length, up, parity)?)
}

/// Sector basis named by `policy`, or `None` for the full space.
pub fn basis_for(policy: &SectorPolicy, length: usize) -> Result<Option<SectorBasis>> {
    Ok(match *policy {
        SectorPolicy::Full => None,
        SectorPolicy::Even => Some(parity_basis(length, Parity::Even)?),
        SectorPolicy::Odd => Some(parity_basis(length, Parity::Odd)?),
        SectorPolicy::Magnetization { up } => Some(magnetization_basis(length, up)?),
        SectorPolicy::Composed { up, parity } => Some(composed_basis(length, up, parity)?),
    })
}

/// Builds the sector block of `model` directly from its Pauli terms, without
/// the dense `2^L` matrix.
///
/// The symmetry is verified by measuring how far `H` maps each sector vector
/// out of the sector.
pub fn sector_hamiltonian(model: &SpinModel, policy: &SectorPolicy) -> Result<HermitianOperator> {
    let Some(basis) = basis_for(policy, model.length)? else {
        return build_hamiltonian(model);
    };
    let n = basis.dim();
    if n > DEFAULT_DIM_CAP {
        return Err(Error::Capacity {
            dim: n,
            cap: DEFAULT_DIM_CAP,
        });
    }
    if n == 0 {
        return Err(Error::argument("sector is empty"));
    }
    let symmetry = match basis.label {
        SectorLabel::Parity(_) => "parity",
        SectorLabel::Magnetization(_) => "magnetization",
        SectorLabel::Composed { .. } => "magnetization/parity",
    };
    let terms = model.terms();
    let lookup = basis.lookup();
    let zero = c64::new(0.0, 0.0);
    let mut scratch = vec![zero; 1 << model.length];
    let mut seen = vec![false; 1 << model.length];
    let mut touched: Vec<usize> = Vec::new();
    let mut m = Mat::<c64>::zeros(n, n);
    let mut leak = 0.0f64;
    for (j, vj) in basis.vectors.iter().enumerate() {
        for &(b, y) in vj {
            for term in &terms {
                let (t, amp) = term.apply(b);
                if !seen[t] {
                    seen[t] = true;
                    touched.push(t);
                }
                scratch[t] += amp * y;
            }
        }
        for &t in &touched {
            if let Some((i, x)) = lookup[t] {
                m[(i, j)] += scratch[t] * x;
            }
        }
        // Residual of H v_j after removing its in-sector component.
        let mut out = 0.0;
        for &t in &touched {
            let inside = lookup[t].map_or(zero, |(i, x)| m[(i, j)] * x);
            out += (scratch[t] - inside).norm_sqr();
            scratch[t] = zero;
            seen[t] = false;
        }
        touched.clear();
        leak = leak.max(out.sqrt());
    }
    require(symmetry, leak)?;
    let h = HermitianOperator::from_trusted(m);
    // Rounding in the sums can leave ~1e-16 asymmetry; symmetrize exactly.
    let n = h.dim();
    let sym = Mat::from_fn(n, n, |i, j| (h.get(i, j) + h.get(j, i).conj()) * 0.5);
    Ok(HermitianOperator::from_trusted(sym))
}

/// `C(n, k)`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}
