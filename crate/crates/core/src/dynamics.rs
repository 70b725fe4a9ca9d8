//! Exact state-vector dynamics of the long-range spin models.
//!
//! Basis convention: amplitude index `b` encodes ion 1 in its most
//! significant bit; bit value 0 is `|up>` (sigma_z = +1) and 1 is `|down>`.
//! The Hamiltonian is applied matrix-free and the propagator is expanded in
//! a Taylor series over substeps short enough that `||H|| dt <= 1`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coupling::CouplingMatrix;
use crate::error::{Error, Result};
use crate::io::Table;

pub const DEFAULT_QUBIT_CAP: usize = 14;

/// Pure state of `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinState {
    amplitudes: Vec<Complex64>,
    qubits: usize,
}

impl SpinState {
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::invalid("amplitudes", "length must be a power of two"));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::invalid("amplitudes", "zero vector"));
        }
        Ok(SpinState {
            amplitudes: amplitudes.into_iter().map(|a| a / norm).collect(),
            qubits: len.trailing_zeros() as usize,
        })
    }

    /// Computational basis state; `up[k]` is the orientation of ion `k+1`.
    pub fn basis(up: &[bool]) -> Self {
        let n = up.len();
        let mut index = 0usize;
        for (k, &u) in up.iter().enumerate() {
            if !u {
                index |= 1 << (n - 1 - k);
            }
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        SpinState { amplitudes, qubits: n }
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Probability of every computational basis state.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Bit mask of ion `k` (0-based) in the amplitude index.
    pub fn mask(&self, k: usize) -> usize {
        1 << (self.qubits - 1 - k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeelAlignment {
    /// Odd ions (1, 3, ...) up.
    OddUp,
    /// Even ions (2, 4, ...) up.
    EvenUp,
}

pub fn neel_state(n: usize, alignment: NeelAlignment) -> Result<SpinState> {
    if n == 0 {
        return Err(Error::invalid("n", "at least one qubit"));
    }
    let up: Vec<bool> = (0..n)
        .map(|k| match alignment {
            NeelAlignment::OddUp => k % 2 == 0,
            NeelAlignment::EvenUp => k % 2 == 1,
        })
        .collect();
    Ok(SpinState::basis(&up))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinModel {
    /// `sum_{i<j} J_ij sx_i sx_j + B sum_k sz_k`
    IsingTransverse,
    /// `sum_{i<j} J_ij (s+_i s-_j + h.c.)`
    XyEffective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    pub coupling: CouplingMatrix,
    pub model: SpinModel,
}

impl HamiltonianSpec {
    pub fn new(coupling: CouplingMatrix, model: SpinModel) -> Self {
        HamiltonianSpec { coupling, model }
    }

    fn pairs(&self) -> Vec<(usize, usize, f64)> {
        let n = self.coupling.ion_count();
        let mut out = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                let j = self.coupling.j[(a, b)];
                if j != 0.0 {
                    out.push((1 << (n - 1 - a), 1 << (n - 1 - b), j));
                }
            }
        }
        out
    }

    fn field(&self) -> f64 {
        match self.model {
            SpinModel::IsingTransverse => self.coupling.field,
            SpinModel::XyEffective => 0.0,
        }
    }

    /// Upper bound on the operator norm.
    pub fn norm_bound(&self) -> f64 {
        let n = self.coupling.ion_count();
        self.pairs().iter().map(|p| p.2.abs()).sum::<f64>() + n as f64 * self.field().abs()
    }
}

/// Matrix-free application of a Hamiltonian.
struct Operator {
    pairs: Vec<(usize, usize, f64)>,
    field: f64,
    qubits: usize,
    xy: bool,
}

impl Operator {
    fn new(h: &HamiltonianSpec) -> Self {
        Operator {
            pairs: h.pairs(),
            field: h.field(),
            qubits: h.coupling.ion_count(),
            xy: h.model == SpinModel::XyEffective,
        }
    }

    fn apply(&self, input: &[Complex64], out: &mut [Complex64]) {
        let n = self.qubits;
        for (b, o) in out.iter_mut().enumerate() {
            // sum_k sz_k = n - 2 * popcount(b)
            let diag = self.field * (n as f64 - 2.0 * b.count_ones() as f64);
            *o = input[b] * diag;
        }
        for &(ma, mb, j) in &self.pairs {
            let flip = ma | mb;
            for b in 0..input.len() {
                if self.xy && ((b & ma == 0) == (b & mb == 0)) {
                    continue;
                }
                out[b ^ flip] += input[b] * j;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionOptions {
    pub max_qubits: usize,
    /// Truncation threshold of each Taylor series (relative to the state norm).
    pub tolerance: f64,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        EvolutionOptions {
            max_qubits: DEFAULT_QUBIT_CAP,
            tolerance: 1e-16,
        }
    }
}

fn check(state: &SpinState, h: &HamiltonianSpec, t: f64, opts: &EvolutionOptions) -> Result<()> {
    if state.qubits > opts.max_qubits {
        return Err(Error::DimensionCap {
            qubits: state.qubits,
            cap: opts.max_qubits,
        });
    }
    if h.coupling.ion_count() != state.qubits {
        return Err(Error::invalid(
            "hamiltonian",
            format!("{} ions in coupling, {} qubits in state", h.coupling.ion_count(), state.qubits),
        ));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", "must be finite and non-negative"));
    }
    Ok(())
}

pub fn evolve(state: &SpinState, h: &HamiltonianSpec, t: f64) -> Result<SpinState> {
    evolve_with(state, h, t, &EvolutionOptions::default())
}

/// `exp(-i H t) |state>`.
pub fn evolve_with(state: &SpinState, h: &HamiltonianSpec, t: f64, opts: &EvolutionOptions) -> Result<SpinState> {
    check(state, h, t, opts)?;
    let op = Operator::new(h);
    let mut psi = state.amplitudes.clone();
    propagate(&op, &mut psi, t, h.norm_bound(), opts.tolerance);
    Ok(SpinState {
        amplitudes: psi,
        qubits: state.qubits,
    })
}

fn propagate(op: &Operator, psi: &mut [Complex64], t: f64, norm: f64, tol: f64) {
    if t == 0.0 || norm == 0.0 {
        return;
    }
    let steps = (norm * t).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let dim = psi.len();
    let mut term = vec![Complex64::new(0.0, 0.0); dim];
    let mut next = vec![Complex64::new(0.0, 0.0); dim];
    let minus_i_dt = Complex64::new(0.0, -dt);
    for _ in 0..steps {
        term.copy_from_slice(psi);
        for k in 1..60 {
            op.apply(&term, &mut next);
            let scale = minus_i_dt / k as f64;
            let mut size = 0.0;
            for (tm, nx) in term.iter_mut().zip(&next) {
                *tm = nx * scale;
                size += tm.norm_sqr();
            }
            for (p, tm) in psi.iter_mut().zip(&term) {
                *p += tm;
            }
            if size.sqrt() < tol {
                break;
            }
        }
    }
}

/// `<sigma_z^k>` for every ion.
pub fn magnetization(state: &SpinState) -> Vec<f64> {
    let n = state.qubits;
    let mut m = vec![0.0; n];
    for (b, a) in state.amplitudes.iter().enumerate() {
        let p = a.norm_sqr();
        for (k, mk) in m.iter_mut().enumerate() {
            if b & (1 << (n - 1 - k)) == 0 {
                *mk += p;
            } else {
                *mk -= p;
            }
        }
    }
    m
}

/// `<psi|H|psi>`.
pub fn energy(state: &SpinState, h: &HamiltonianSpec) -> f64 {
    let op = Operator::new(h);
    let mut out = vec![Complex64::new(0.0, 0.0); state.amplitudes.len()];
    op.apply(&state.amplitudes, &mut out);
    state
        .amplitudes
        .iter()
        .zip(&out)
        .map(|(a, b)| (a.conj() * b).re)
        .sum()
}

/// Magnetization time series `(t, <sz_1>, ..., <sz_N>)` at ascending `times`.
pub fn magnetization_series(state: &SpinState, h: &HamiltonianSpec, times: &[f64]) -> Result<Table> {
    let n = state.qubits;
    let mut header = vec!["t_s".to_string()];
    header.extend((1..=n).map(|k| format!("sz_{k}")));
    let mut table = Table::new(header);
    let mut psi = state.clone();
    let mut now = 0.0;
    for &t in times {
        if t < now {
            return Err(Error::invalid("times", "must be ascending and non-negative"));
        }
        psi = evolve(&psi, h, t - now)?;
        now = t;
        let mut row = vec![t];
        row.extend(magnetization(&psi));
        table.push(row);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn two_ion(j: f64, field: f64, model: SpinModel) -> HamiltonianSpec {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, j, j, 0.0]);
        HamiltonianSpec::new(CouplingMatrix::new(m, field).unwrap(), model)
    }

    fn random_coupling(n: usize, seed: u64, field: f64) -> CouplingMatrix {
        let mut rng = crate::rng::stream(seed, 0);
        let mut j = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in (a + 1)..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                j[(a, b)] = v;
                j[(b, a)] = v;
            }
        }
        CouplingMatrix::new(j, field).unwrap()
    }

    #[test]
    fn neel_states() {
        let s = neel_state(2, NeelAlignment::OddUp).unwrap();
        assert_eq!(s.amplitudes()[0b01].re, 1.0);
        let s = neel_state(3, NeelAlignment::EvenUp).unwrap();
        assert_eq!(s.amplitudes()[0b101].re, 1.0);
        assert_eq!(magnetization(&s), vec![-1.0, 1.0, -1.0]);
        let s = neel_state(6, NeelAlignment::OddUp).unwrap();
        assert_eq!(magnetization(&s), vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn all_up_magnetization() {
        let s = SpinState::basis(&[true; 4]);
        assert_eq!(magnetization(&s), vec![1.0; 4]);
    }

    #[test]
    fn two_ion_flip_flop_matches_cosine() {
        let j = 2.0 * std::f64::consts::PI * 37.0;
        for model in [SpinModel::IsingTransverse, SpinModel::XyEffective] {
            let h = two_ion(j, 0.0, model);
            let s0 = neel_state(2, NeelAlignment::OddUp).unwrap();
            for &t in &[0.0, 1e-3, 3.3e-3, 0.02] {
                let m = magnetization(&evolve(&s0, &h, t).unwrap());
                assert!((m[0] - (2.0 * j * t).cos()).abs() < 1e-10, "t={t}");
            }
            let quarter = std::f64::consts::PI / (4.0 * j);
            let m = magnetization(&evolve(&s0, &h, quarter).unwrap());
            assert!(m[0].abs() < 1e-10);
        }
    }

    #[test]
    fn zero_coupling_keeps_populations() {
        let c = CouplingMatrix::new(DMatrix::zeros(4, 4), 3.0).unwrap();
        let h = HamiltonianSpec::new(c, SpinModel::IsingTransverse);
        let amps: Vec<Complex64> = (0..16).map(|k| Complex64::new(k as f64, 1.0)).collect();
        let s = SpinState::from_amplitudes(amps).unwrap();
        let e = evolve(&s, &h, 2.7).unwrap();
        for (a, b) in s.probabilities().iter().zip(e.probabilities()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn semigroup_norm_and_energy() {
        let h = HamiltonianSpec::new(random_coupling(6, 11, 0.7), SpinModel::IsingTransverse);
        let s0 = neel_state(6, NeelAlignment::OddUp).unwrap();
        let t = 1.9;
        let once = evolve(&s0, &h, t).unwrap();
        let twice = evolve(&evolve(&s0, &h, t / 2.0).unwrap(), &h, t / 2.0).unwrap();
        let diff = once
            .amplitudes()
            .iter()
            .zip(twice.amplitudes())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8);
        assert!((once.norm() - 1.0).abs() < 1e-10);
        assert!((energy(&once, &h) - energy(&s0, &h)).abs() < 1e-9);
    }

    #[test]
    fn xy_conserves_total_magnetization() {
        let h = HamiltonianSpec::new(random_coupling(7, 5, 0.0), SpinModel::XyEffective);
        let s0 = neel_state(7, NeelAlignment::EvenUp).unwrap();
        let total0: f64 = magnetization(&s0).iter().sum();
        for t in [0.3, 1.0, 4.0] {
            let s = evolve(&s0, &h, t).unwrap();
            let total: f64 = magnetization(&s).iter().sum();
            assert!((total - total0).abs() < 1e-9);
        }
    }

    #[test]
    fn cap_and_shape_errors() {
        let h = HamiltonianSpec::new(random_coupling(3, 1, 0.0), SpinModel::XyEffective);
        let s = neel_state(3, NeelAlignment::OddUp).unwrap();
        let opts = EvolutionOptions {
            max_qubits: 2,
            ..Default::default()
        };
        assert!(matches!(evolve_with(&s, &h, 1.0, &opts), Err(Error::DimensionCap { qubits: 3, cap: 2 })));
        let s4 = neel_state(4, NeelAlignment::OddUp).unwrap();
        assert!(evolve(&s4, &h, 1.0).is_err());
        assert!(evolve(&s, &h, -1.0).is_err());
    }

    #[test]
    fn series_rows() {
        let h = two_ion(1.0, 0.0, SpinModel::XyEffective);
        let s0 = neel_state(2, NeelAlignment::OddUp).unwrap();
        let table = magnetization_series(&s0, &h, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(table.header, vec!["t_s", "sz_1", "sz_2"]);
        assert!((table.rows[2][1] - 2f64.cos()).abs() < 1e-10);
    }
}
