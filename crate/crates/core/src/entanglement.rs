//! Reduced density matrices, logarithmic negativities and simulated Pauli
//! tomography of small subsystems.
//!
//! Qubit `0` of a density matrix is the most significant bit of its row
//! index, matching [`SpinState`](crate::dynamics::SpinState).

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::SpinState;
use crate::error::{Error, Result};
use crate::io::Table;
use crate::rng;

pub const DEFAULT_MAX_SUBSYSTEM: usize = 3;
const HERMITIAN_TOLERANCE: f64 = 1e-10;

type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Density operator of `qubits` two-level systems.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: CMatrix,
    qubits: usize,
}

impl DensityMatrix {
    /// Wrap a matrix, checking it is Hermitian with unit trace.
    pub fn new(entries: CMatrix) -> Result<Self> {
        let d = entries.nrows();
        if !entries.is_square() || d == 0 || !d.is_power_of_two() {
            return Err(Error::invalid("rho", "must be square with power-of-two dimension"));
        }
        let deviation = (&entries - entries.adjoint()).camax();
        if deviation > HERMITIAN_TOLERANCE {
            return Err(Error::NonHermitian { deviation });
        }
        let tr = entries.trace();
        if (tr - ONE).norm() > HERMITIAN_TOLERANCE {
            return Err(Error::invalid("rho", format!("trace {tr} differs from 1")));
        }
        Ok(DensityMatrix {
            entries,
            qubits: d.trailing_zeros() as usize,
        })
    }

    pub fn from_pure(state: &SpinState) -> Self {
        let v = state.amplitudes();
        let d = v.len();
        let entries = CMatrix::from_fn(d, d, |a, b| v[a] * v[b].conj());
        DensityMatrix {
            entries,
            qubits: state.qubits(),
        }
    }

    pub fn maximally_mixed(qubits: usize) -> Self {
        let d = 1 << qubits;
        DensityMatrix {
            entries: CMatrix::identity(d, d) / Complex64::new(d as f64, 0.0),
            qubits,
        }
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn purity(&self) -> f64 {
        (&self.entries * &self.entries).trace().re
    }

    /// Real eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.entries)
    }

    /// Partial transpose on qubit `q`. Hermitian and unit-trace, but not
    /// necessarily positive.
    pub fn partial_transpose(&self, q: usize) -> Result<DensityMatrix> {
        if q >= self.qubits {
            return Err(Error::invalid("qubit", format!("{q} out of range for {} qubits", self.qubits)));
        }
        let mask = 1 << (self.qubits - 1 - q);
        let d = self.entries.nrows();
        let entries = CMatrix::from_fn(d, d, |a, b| {
            let a2 = (a & !mask) | (b & mask);
            let b2 = (b & !mask) | (a & mask);
            self.entries[(a2, b2)]
        });
        Ok(DensityMatrix {
            entries,
            qubits: self.qubits,
        })
    }

    /// Sum of absolute eigenvalues.
    pub fn trace_norm(&self) -> f64 {
        self.eigenvalues().iter().map(|l| l.abs()).sum()
    }

    /// Apply a unitary on one qubit: `rho -> U rho U^dagger`.
    pub fn apply_local(&self, q: usize, u: &[[Complex64; 2]; 2]) -> DensityMatrix {
        let full = local_operator(self.qubits, q, u);
        DensityMatrix {
            entries: &full * &self.entries * full.adjoint(),
            qubits: self.qubits,
        }
    }

    /// Reorder qubits: new qubit `k` is old qubit `order[k]`.
    pub fn permute(&self, order: &[usize]) -> DensityMatrix {
        let n = self.qubits;
        let map = |idx: usize| -> usize {
            let mut old = 0;
            for (k, &src) in order.iter().enumerate() {
                if idx & (1 << (n - 1 - k)) != 0 {
                    old |= 1 << (n - 1 - src);
                }
            }
            old
        };
        let d = self.entries.nrows();
        let entries = CMatrix::from_fn(d, d, |a, b| self.entries[(map(a), map(b))]);
        DensityMatrix { entries, qubits: n }
    }
}

fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn local_operator(n: usize, q: usize, u: &[[Complex64; 2]; 2]) -> CMatrix {
    let d = 1 << n;
    let mask = 1 << (n - 1 - q);
    CMatrix::from_fn(d, d, |a, b| {
        if (a & !mask) != (b & !mask) {
            return ZERO;
        }
        let ra = usize::from(a & mask != 0);
        let rb = usize::from(b & mask != 0);
        u[ra][rb]
    })
}

/// Partial trace of a pure state onto `subset` (ion indices, 0-based, in
/// the order they should appear in the reduced matrix).
pub fn reduce(state: &SpinState, subset: &[usize]) -> Result<DensityMatrix> {
    reduce_with_limit(state, subset, DEFAULT_MAX_SUBSYSTEM)
}

pub fn reduce_with_limit(state: &SpinState, subset: &[usize], max_size: usize) -> Result<DensityMatrix> {
    let n = state.qubits();
    if subset.is_empty() || subset.len() > max_size {
        return Err(Error::invalid("subset", format!("size must be 1..={max_size}")));
    }
    for (i, &a) in subset.iter().enumerate() {
        if a >= n {
            return Err(Error::invalid("subset", format!("ion {a} out of range")));
        }
        if subset[..i].contains(&a) {
            return Err(Error::invalid("subset", format!("duplicate ion {a}")));
        }
    }
    let k = subset.len();
    let rest: Vec<usize> = (0..n).filter(|q| !subset.contains(q)).collect();
    let bit = |q: usize| 1usize << (n - 1 - q);
    let compose = |s: usize, r: usize| -> usize {
        let mut idx = 0;
        for (j, &q) in subset.iter().enumerate() {
            if s & (1 << (k - 1 - j)) != 0 {
                idx |= bit(q);
            }
        }
        for (j, &q) in rest.iter().enumerate() {
            if r & (1 << (rest.len() - 1 - j)) != 0 {
                idx |= bit(q);
            }
        }
        idx
    };
    let amps = state.amplitudes();
    let dk = 1 << k;
    let mut rho = CMatrix::zeros(dk, dk);
    let mut column = vec![ZERO; dk];
    for r in 0..(1usize << rest.len()) {
        for (s, c) in column.iter_mut().enumerate() {
            *c = amps[compose(s, r)];
        }
        for a in 0..dk {
            if column[a] == ZERO {
                continue;
            }
            for b in 0..dk {
                rho[(a, b)] += column[a] * column[b].conj();
            }
        }
    }
    Ok(DensityMatrix { entries: rho, qubits: k })
}

/// A logarithmic negativity value together with the unclipped number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogNegativity {
    /// `max(raw, 0)`.
    pub value: f64,
    /// `log2` of the trace norm as computed; may dip below zero by round-off.
    pub raw: f64,
}

impl LogNegativity {
    fn from_raw(raw: f64) -> Self {
        LogNegativity { value: raw.max(0.0), raw }
    }
}

fn bipartition_ln(rho: &DensityMatrix, transposed: usize) -> Result<LogNegativity> {
    let deviation = (rho.entries() - rho.entries().adjoint()).camax();
    if deviation > HERMITIAN_TOLERANCE {
        return Err(Error::NonHermitian { deviation });
    }
    let pt = rho.partial_transpose(transposed)?;
    Ok(LogNegativity::from_raw(pt.trace_norm().log2()))
}

/// `LN2 = log2 || rho^{T_cut} ||_1` of a two-qubit state.
pub fn log_negativity_2(rho: &DensityMatrix, cut: usize) -> Result<LogNegativity> {
    if rho.qubits() != 2 {
        return Err(Error::invalid("rho", "two-qubit density matrix required"));
    }
    bipartition_ln(rho, cut)
}

/// Geometric mean of the three one-versus-two log-negativities of a
/// three-qubit state.
pub fn log_negativity_3(rho: &DensityMatrix) -> Result<LogNegativity> {
    if rho.qubits() != 3 {
        return Err(Error::invalid("rho", "three-qubit density matrix required"));
    }
    let mut product = 1.0;
    let mut raw_product = 1.0;
    for q in 0..3 {
        let ln = bipartition_ln(rho, q)?;
        product *= ln.value;
        raw_product *= ln.raw;
    }
    Ok(LogNegativity {
        value: product.cbrt(),
        raw: raw_product.cbrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PauliBasis {
    X,
    Y,
    Z,
}

impl PauliBasis {
    const ALL: [PauliBasis; 3] = [PauliBasis::X, PauliBasis::Y, PauliBasis::Z];

    fn matrix(self) -> [[Complex64; 2]; 2] {
        match self {
            PauliBasis::X => [[ZERO, ONE], [ONE, ZERO]],
            PauliBasis::Y => [[ZERO, -I], [I, ZERO]],
            PauliBasis::Z => [[ONE, ZERO], [ZERO, -ONE]],
        }
    }
}

/// Outcome counts of one measurement setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TomographyRecord {
    pub setting: Vec<PauliBasis>,
    /// `counts[o]` for outcome bitstring `o` (bit set = eigenvalue -1; qubit 0 most significant).
    pub counts: Vec<u64>,
    pub shots: u64,
    pub seed: u64,
}

fn all_settings(k: usize) -> Vec<Vec<PauliBasis>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|s| {
                PauliBasis::ALL.iter().map(move |&b| {
                    let mut t = s.clone();
                    t.push(b);
                    t
                })
            })
            .collect();
    }
    out
}

fn outcome_probabilities(rho: &DensityMatrix, setting: &[PauliBasis]) -> Vec<f64> {
    let k = setting.len();
    let d = 1 << k;
    (0..d)
        .map(|o| {
            // projector onto the joint eigenspace labelled by `o`
            let mut proj = CMatrix::identity(d, d);
            for (q, b) in setting.iter().enumerate() {
                let sign = if o & (1 << (k - 1 - q)) != 0 { -0.5 } else { 0.5 };
                let p = b.matrix();
                let half = Complex64::new(0.5, 0.0);
                let sgn = Complex64::new(sign, 0.0);
                let local = [
                    [half + sgn * p[0][0], sgn * p[0][1]],
                    [sgn * p[1][0], half + sgn * p[1][1]],
                ];
                proj = local_operator(k, q, &local) * proj;
            }
            (rho.entries() * proj).trace().re.clamp(0.0, 1.0)
        })
        .collect()
}

/// Measure every Pauli setting of `rho` with `shots` samples each.
pub fn simulate_records(rho: &DensityMatrix, shots: u64, seed: u64) -> Result<Vec<TomographyRecord>> {
    if shots == 0 {
        return Err(Error::invalid("shots", "at least one shot per setting"));
    }
    Ok(all_settings(rho.qubits())
        .into_iter()
        .enumerate()
        .map(|(index, setting)| {
            let probs = outcome_probabilities(rho, &setting);
            let mut stream = rng::stream(seed, index as u64);
            let mut counts = vec![0u64; probs.len()];
            for _ in 0..shots {
                let u: f64 = stream.random();
                let mut acc = 0.0;
                let mut pick = probs.len() - 1;
                for (o, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = o;
                        break;
                    }
                }
                counts[pick] += 1;
            }
            TomographyRecord {
                setting,
                counts,
                shots,
                seed,
            }
        })
        .collect())
}

/// Linear-inversion estimate from per-setting outcome frequencies
/// (`frequencies[s][o]`, settings in canonical order), projected onto the
/// nearest unit-trace positive semidefinite matrix.
fn linear_inversion(k: usize, settings: &[Vec<PauliBasis>], frequencies: &[Vec<f64>]) -> Result<DensityMatrix> {
    let d = 1 << k;
    let mut rho = CMatrix::zeros(d, d);
    // Pauli strings: 0 = I, 1..=3 = X, Y, Z
    for code in 0..(1usize << (2 * k)) {
        let ops: Vec<usize> = (0..k).map(|q| (code >> (2 * (k - 1 - q))) & 3).collect();
        let expectation = if ops.iter().all(|&o| o == 0) {
            1.0
        } else {
            let mut sum = 0.0;
            let mut used = 0;
            for (setting, freq) in settings.iter().zip(frequencies) {
                let compatible = ops
                    .iter()
                    .zip(setting)
                    .all(|(&o, b)| o == 0 || PauliBasis::ALL[o - 1] == *b);
                if !compatible {
                    continue;
                }
                used += 1;
                for (outcome, f) in freq.iter().enumerate() {
                    let parity = ops
                        .iter()
                        .enumerate()
                        .filter(|(q, &o)| o != 0 && outcome & (1 << (k - 1 - q)) != 0)
                        .count();
                    sum += if parity % 2 == 0 { *f } else { -*f };
                }
            }
            sum / used as f64
        };
        let mut op = CMatrix::identity(d, d);
        for (q, &o) in ops.iter().enumerate() {
            if o != 0 {
                op = local_operator(k, q, &PauliBasis::ALL[o - 1].matrix()) * op;
            }
        }
        rho += op * Complex64::new(expectation / d as f64, 0.0);
    }
    // remove round-off asymmetry before projecting
    let rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    project_to_state(rho)
}

/// Frobenius-nearest positive semidefinite unit-trace matrix.
pub fn project_to_state(m: CMatrix) -> Result<DensityMatrix> {
    let eig = SymmetricEigen::new(m);
    let projected = project_simplex(eig.eigenvalues.iter().copied().collect());
    let d = projected.len();
    let mut out = CMatrix::zeros(d, d);
    for (j, &l) in projected.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(j);
        out += v * v.adjoint() * Complex64::new(l, 0.0);
    }
    DensityMatrix::new((&out + out.adjoint()) * Complex64::new(0.5, 0.0))
}

/// Euclidean projection of a vector onto the probability simplex.
fn project_simplex(v: Vec<f64>) -> Vec<f64> {
    let mut sorted = v.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Reconstruct from measured records.
pub fn reconstruct(records: &[TomographyRecord]) -> Result<DensityMatrix> {
    let k = records
        .first()
        .map(|r| r.setting.len())
        .ok_or_else(|| Error::invalid("records", "empty"))?;
    let settings: Vec<Vec<PauliBasis>> = records.iter().map(|r| r.setting.clone()).collect();
    let freqs: Vec<Vec<f64>> = records
        .iter()
        .map(|r| r.counts.iter().map(|&c| c as f64 / r.shots as f64).collect())
        .collect();
    linear_inversion(k, &settings, &freqs)
}

/// Shot-limited tomography of a subsystem of a pure state. `shots = None`
/// uses exact outcome probabilities (the infinite-shot limit).
pub fn simulate_tomography(state: &SpinState, subset: &[usize], shots: Option<u64>, seed: u64) -> Result<DensityMatrix> {
    let rho = reduce(state, subset)?;
    tomography_of(&rho, shots, seed)
}

/// Shot-limited tomography of a given density matrix.
pub fn tomography_of(rho: &DensityMatrix, shots: Option<u64>, seed: u64) -> Result<DensityMatrix> {
    if rho.qubits() > DEFAULT_MAX_SUBSYSTEM {
        return Err(Error::invalid("subset", "tomography limited to three qubits"));
    }
    match shots {
        Some(s) => reconstruct(&simulate_records(rho, s, seed)?),
        None => {
            let settings = all_settings(rho.qubits());
            let freqs: Vec<Vec<f64>> = settings.iter().map(|s| outcome_probabilities(rho, s)).collect();
            linear_inversion(rho.qubits(), &settings, &freqs)
        }
    }
}

/// One row of a log-negativity export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LnEntry {
    /// 1-based ion indices (two or three).
    pub ions: Vec<usize>,
    pub value: f64,
    pub shots: Option<u64>,
    pub seed: u64,
}

/// CSV with columns `ion_i, ion_j, ion_k, value, shots, seed`; `ion_k` is 0
/// for pairs and `shots` is 0 for exact values.
pub fn ln_table(entries: &[LnEntry]) -> Table {
    let mut t = Table::new(["ion_i", "ion_j", "ion_k", "log_negativity", "shots", "seed"]);
    for e in entries {
        let ion = |k: usize| e.ions.get(k).copied().unwrap_or(0) as f64;
        t.push(vec![
            ion(0),
            ion(1),
            ion(2),
            e.value,
            e.shots.unwrap_or(0) as f64,
            e.seed as f64,
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(amps: &[(usize, Complex64)], n: usize) -> SpinState {
        let mut v = vec![ZERO; 1 << n];
        for &(i, a) in amps {
            v[i] = a;
        }
        SpinState::from_amplitudes(v).unwrap()
    }

    fn bell() -> SpinState {
        state(&[(0, ONE), (3, ONE)], 2)
    }

    fn ghz3() -> SpinState {
        state(&[(0, ONE), (7, ONE)], 3)
    }

    fn werner(p: f64) -> DensityMatrix {
        let b = DensityMatrix::from_pure(&bell());
        let m = b.entries() * Complex64::new(p, 0.0) + DensityMatrix::maximally_mixed(2).entries() * Complex64::new(1.0 - p, 0.0);
        DensityMatrix::new(m).unwrap()
    }

    fn random_unitary(theta: f64, phi: f64, lambda: f64) -> [[Complex64; 2]; 2] {
        let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        [
            [Complex64::new(c, 0.0), -Complex64::from_polar(s, lambda)],
            [Complex64::from_polar(s, phi), Complex64::from_polar(c, phi + lambda)],
        ]
    }

    #[test]
    fn product_state_reduction_is_pure() {
        let s = SpinState::basis(&[true, false, true, true]);
        let r = reduce(&s, &[1, 3]).unwrap();
        assert!((r.purity() - 1.0).abs() < 1e-12);
        assert!(log_negativity_2(&r, 0).unwrap().value.abs() < 1e-9);
    }

    #[test]
    fn bell_pair_inside_larger_register() {
        // ions 1 and 3 form a Bell pair, ions 2 and 4 are up
        let s = state(&[(0b0000, ONE), (0b1010, ONE)], 4);
        let r = reduce(&s, &[0, 2]).unwrap();
        let expected = DensityMatrix::from_pure(&bell());
        assert!((r.entries() - expected.entries()).camax() < 1e-12);
        assert!((log_negativity_2(&r, 0).unwrap().value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ghz_pair_reduction_is_classical() {
        let r = reduce(&ghz3(), &[0, 1]).unwrap();
        let mut expected = CMatrix::zeros(4, 4);
        expected[(0, 0)] = Complex64::new(0.5, 0.0);
        expected[(3, 3)] = Complex64::new(0.5, 0.0);
        assert!((r.entries() - expected).camax() < 1e-12);
    }

    #[test]
    fn reduce_rejects_bad_subsets() {
        let s = ghz3();
        assert!(reduce(&s, &[0, 0]).is_err());
        assert!(reduce(&s, &[5]).is_err());
        assert!(reduce(&SpinState::basis(&[true; 5]), &[0, 1, 2, 3]).is_err());
        assert!(reduce_with_limit(&SpinState::basis(&[true; 5]), &[0, 1, 2, 3], 4).is_ok());
    }

    #[test]
    fn werner_closed_form() {
        for i in 0..=20 {
            let p = i as f64 / 20.0;
            let ln = log_negativity_2(&werner(p), 0).unwrap().value;
            let oracle = (1.0 + ((3.0 * p - 1.0) / 2.0).max(0.0)).log2();
            assert!((ln - oracle).abs() < 1e-9, "p={p}");
        }
    }

    #[test]
    fn three_qubit_goldens() {
        let ghz = DensityMatrix::from_pure(&ghz3());
        assert!((log_negativity_3(&ghz).unwrap().value - 1.0).abs() < 1e-8);
        let product = DensityMatrix::from_pure(&SpinState::basis(&[true, false, false]));
        assert!(log_negativity_3(&product).unwrap().value.abs() < 1e-9);
        // frozen from an independent numpy eigendecomposition of the W state
        let w = DensityMatrix::from_pure(&state(&[(1, ONE), (2, ONE), (4, ONE)], 3));
        assert!((log_negativity_3(&w).unwrap().value - 0.958_144_105_606_068).abs() < 1e-9);
    }

    #[test]
    fn wrong_sizes_and_non_hermitian_rejected() {
        let ghz = DensityMatrix::from_pure(&ghz3());
        assert!(log_negativity_2(&ghz, 0).is_err());
        assert!(log_negativity_3(&werner(0.5)).is_err());
        let mut m = werner(0.5).entries().clone();
        m[(0, 1)] = Complex64::new(0.1, 0.0);
        assert!(matches!(DensityMatrix::new(m), Err(Error::NonHermitian { .. })));
    }

    #[test]
    fn exact_tomography_reproduces_state() {
        let s = ghz3();
        let est = simulate_tomography(&s, &[0, 1, 2], None, 0).unwrap();
        let exact = DensityMatrix::from_pure(&s);
        assert!((est.entries() - exact.entries()).camax() < 1e-10);
    }

    #[test]
    fn shot_tomography_is_seed_deterministic() {
        let a = simulate_tomography(&bell(), &[0, 1], Some(200), 42).unwrap();
        let b = simulate_tomography(&bell(), &[0, 1], Some(200), 42).unwrap();
        assert_eq!(a, b);
        assert!(a.eigenvalues()[0] >= -1e-12);
        assert!((a.entries().trace().re - 1.0).abs() < 1e-12);
        let records = simulate_records(&DensityMatrix::from_pure(&bell()), 37, 1).unwrap();
        assert_eq!(records.len(), 9);
        assert!(records.iter().all(|r| r.counts.iter().sum::<u64>() == 37));
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(vec![0.7, 0.5, -0.2]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.4).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn ln_export_columns() {
        let t = ln_table(&[LnEntry {
            ions: vec![3, 4],
            value: 0.25,
            shots: Some(500),
            seed: 9,
        }]);
        assert_eq!(t.to_csv(), "ion_i,ion_j,ion_k,log_negativity,shots,seed\n3,4,0,0.25,500,9\n");
    }

    proptest! {
        #[test]
        fn ln2_local_unitary_invariance(p in 0.0f64..1.0, a in 0.0f64..6.3, b in 0.0f64..6.3, c in 0.0f64..6.3) {
            let rho = werner(p).apply_local(0, &random_unitary(a, b, c)).apply_local(1, &random_unitary(c, a, b));
            let lhs = log_negativity_2(&rho, 0).unwrap().value;
            let rhs = log_negativity_2(&werner(p), 0).unwrap().value;
            prop_assert!((lhs - rhs).abs() < 1e-9);
            let other_side = log_negativity_2(&rho, 1).unwrap().value;
            prop_assert!((lhs - other_side).abs() < 1e-10);
            let back = rho.partial_transpose(0).unwrap().partial_transpose(0).unwrap();
            prop_assert_eq!(back.entries(), rho.entries());
        }

        #[test]
        fn ln3_permutation_symmetry(re in proptest::collection::vec(-1.0f64..1.0, 8), im in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let amps: Vec<Complex64> = re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect();
            let s = SpinState::from_amplitudes(amps).unwrap();
            let rho = DensityMatrix::from_pure(&s);
            let base = log_negativity_3(&rho).unwrap().value;
            for order in [[1, 0, 2], [2, 1, 0], [0, 2, 1], [1, 2, 0], [2, 0, 1]] {
                let v = log_negativity_3(&rho.permute(&order)).unwrap().value;
                prop_assert!((v - base).abs() < 1e-9);
            }
        }
    }
}
