//! Linear ion strings in an anisotropic harmonic trap: equilibrium positions,
//! normal modes and Lamb-Dicke parameters.
//!
//! Positions are solved in the natural length unit
//! `l = (e^2 / (4 pi eps0 m omega_z^2))^(1/3)`, in which the potential reads
//! `V(u) = sum_i u_i^2 / 2 + sum_{i<j} 1 / |u_i - u_j|` and mode eigenvalues
//! come out in units of `omega_z^2`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::constants::{coulomb_constant, HBAR};
use crate::error::{Error, Result};
use crate::io::Table;

const MAX_NEWTON_ITERATIONS: usize = 200;
const POSITION_TOLERANCE: f64 = 1e-12;
const FORCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapParameters {
    /// Radial trap frequency along x, rad/s.
    pub omega_x: f64,
    /// Radial trap frequency along y, rad/s.
    pub omega_y: f64,
    /// Axial trap frequency, rad/s.
    pub omega_z: f64,
    /// Ion mass, kg.
    pub ion_mass: f64,
    pub ion_count: usize,
    /// Wavelength of the laser addressing the qubit, m.
    pub laser_wavelength: f64,
}

impl TrapParameters {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega_x", self.omega_x),
            ("omega_y", self.omega_y),
            ("omega_z", self.omega_z),
            ("ion_mass", self.ion_mass),
            ("laser_wavelength", self.laser_wavelength),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        if self.ion_count == 0 {
            return Err(Error::invalid("ion_count", "must be at least 1"));
        }
        Ok(())
    }

    /// Natural length scale of the axial Coulomb problem, m.
    pub fn length_scale(&self) -> f64 {
        (coulomb_constant() / (self.ion_mass * self.omega_z * self.omega_z)).cbrt()
    }

    /// Laser wavevector magnitude `2 pi / lambda`, rad/m.
    pub fn wavevector(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.laser_wavelength
    }

    fn direction_frequency(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Axial => self.omega_z,
            Direction::RadialX => self.omega_x,
            Direction::RadialY => self.omega_y,
        }
    }
}

/// Equilibrium ion positions along the trap axis, ascending, in metres.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionList {
    positions: Vec<f64>,
    length_scale: f64,
}

impl PositionList {
    pub fn as_slice(&self) -> &[f64] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    /// Distance between the outermost ions, m.
    pub fn span(&self) -> f64 {
        match (self.positions.first(), self.positions.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Positions in units of the natural length scale.
    pub fn dimensionless(&self) -> Vec<f64> {
        self.positions.iter().map(|z| z / self.length_scale).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Axial,
    RadialX,
    RadialY,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Axial => "axial",
            Direction::RadialX => "radial-x",
            Direction::RadialY => "radial-y",
        })
    }
}

/// Normal modes of one motional direction.
///
/// Column `m` of `eigenvectors` is mode `m`; row `i` is ion `i`. Modes are
/// sorted by ascending frequency and each eigenvector has its largest-magnitude
/// component positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpectrum {
    pub direction: Direction,
    /// Mode angular frequencies, rad/s.
    pub frequencies: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// Signed Lamb-Dicke parameters `eta[(i, m)]`, once computed.
    pub lamb_dicke: Option<DMatrix<f64>>,
    pub ion_mass: f64,
}

impl ModeSpectrum {
    pub fn mode_count(&self) -> usize {
        self.frequencies.len()
    }

    /// Compute `eta_{i,m} = k b_{i,m} sqrt(hbar / (2 m omega_m))` for a wavevector
    /// projection `k_projection` (rad/m) along this mode direction.
    pub fn with_lamb_dicke(&self, k_projection: f64) -> Result<ModeSpectrum> {
        if !k_projection.is_finite() {
            return Err(Error::invalid("k_projection", "must be finite"));
        }
        let n = self.eigenvectors.nrows();
        let eta = DMatrix::from_fn(n, self.mode_count(), |i, m| {
            let zpf = (HBAR / (2.0 * self.ion_mass * self.frequencies[m])).sqrt();
            k_projection * self.eigenvectors[(i, m)] * zpf
        });
        Ok(ModeSpectrum {
            lamb_dicke: Some(eta),
            ..self.clone()
        })
    }

    /// CSV table: mode index, frequency in Hz, then one column per ion.
    pub fn to_table(&self) -> Table {
        let n = self.eigenvectors.nrows();
        let mut header = vec!["mode".to_string(), "frequency_hz".to_string()];
        header.extend((1..=n).map(|i| format!("b_{i}")));
        let mut table = Table::new(header);
        for (m, w) in self.frequencies.iter().enumerate() {
            let mut row = vec![(m + 1) as f64, w / (2.0 * std::f64::consts::PI)];
            row.extend(self.eigenvectors.column(m).iter());
            table.push(row);
        }
        table
    }

    pub fn to_json(&self) -> serde_json::Value {
        let cols = |mat: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..mat.ncols()).map(|m| mat.column(m).iter().copied().collect()).collect()
        };
        serde_json::json!({
            "direction": self.direction,
            "frequencies_hz": self.frequencies.iter().map(|w| w / (2.0 * std::f64::consts::PI)).collect::<Vec<_>>(),
            "eigenvectors_by_mode": cols(&self.eigenvectors),
            "lamb_dicke_by_mode": self.lamb_dicke.as_ref().map(cols),
        })
    }
}

fn coulomb_gradient(u: &[f64]) -> DVector<f64> {
    let n = u.len();
    DVector::from_fn(n, |i, _| {
        let mut g = u[i];
        for (j, &uj) in u.iter().enumerate() {
            if j != i {
                let d = u[i] - uj;
                g -= d.signum() / (d * d);
            }
        }
        g
    })
}

fn coulomb_energy(u: &[f64]) -> f64 {
    let mut e = 0.0;
    for i in 0..u.len() {
        e += 0.5 * u[i] * u[i];
        for j in (i + 1)..u.len() {
            e += 1.0 / (u[j] - u[i]).abs();
        }
    }
    e
}

/// Matrix `K` with `K_ii = sum_j 1/|u_i-u_j|^3`, `K_ij = -1/|u_i-u_j|^3`.
fn coulomb_curvature(u: &[f64]) -> DMatrix<f64> {
    let n = u.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let c = 1.0 / (u[i] - u[j]).abs().powi(3);
                k[(i, j)] = -c;
                k[(i, i)] += c;
            }
        }
    }
    k
}

/// Axial Hessian `I + 2K` in units of `m omega_z^2`.
fn axial_hessian(u: &[f64]) -> DMatrix<f64> {
    let n = u.len();
    DMatrix::identity(n, n) + coulomb_curvature(u) * 2.0
}

fn is_strictly_increasing(u: &[f64]) -> bool {
    u.windows(2).all(|w| w[1] > w[0])
}

/// Solve for the equilibrium positions of the string by damped Newton
/// iteration from a uniform-spacing seed.
pub fn equilibrium_positions(trap: &TrapParameters) -> Result<PositionList> {
    trap.validate()?;
    let n = trap.ion_count;
    let scale = trap.length_scale();
    if n == 1 {
        return Ok(PositionList {
            positions: vec![0.0],
            length_scale: scale,
        });
    }

    let spacing = 2.018 * (n as f64).powf(-0.559);
    let mut u: Vec<f64> = (0..n)
        .map(|i| (i as f64 - (n as f64 - 1.0) / 2.0) * spacing)
        .collect();

    let mut residual = f64::INFINITY;
    for _ in 0..MAX_NEWTON_ITERATIONS {
        let grad = coulomb_gradient(&u);
        residual = grad.amax();
        let hess = axial_hessian(&u);
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::Singular("axial Hessian not positive definite".into()))?
            .solve(&(-&grad));

        let energy = coulomb_energy(&u);
        let mut lambda = 1.0;
        let mut candidate: Vec<f64>;
        loop {
            candidate = u.iter().zip(step.iter()).map(|(a, d)| a + lambda * d).collect();
            if is_strictly_increasing(&candidate)
                && (coulomb_energy(&candidate) <= energy + 1e-14 * energy.abs() || lambda < 1e-6)
            {
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-12 {
                return Err(Error::NotConverged {
                    what: "equilibrium line search".into(),
                    iterations: 0,
                    residual,
                });
            }
        }
        let max_u = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let max_step = step.amax() * lambda;
        u = candidate;
        if max_step <= POSITION_TOLERANCE * max_u.max(1.0) && residual < FORCE_TOLERANCE * 1e3 {
            // Symmetrize away round-off so that z_i = -z_{N+1-i} holds exactly.
            let sym: Vec<f64> = (0..n).map(|i| 0.5 * (u[i] - u[n - 1 - i])).collect();
            let final_residual = coulomb_gradient(&sym).amax();
            if final_residual > 1e-9 {
                return Err(Error::NotConverged {
                    what: "equilibrium positions".into(),
                    iterations: MAX_NEWTON_ITERATIONS,
                    residual: final_residual,
                });
            }
            return Ok(PositionList {
                positions: sym.iter().map(|x| x * scale).collect(),
                length_scale: scale,
            });
        }
    }
    Err(Error::NotConverged {
        what: "equilibrium positions".into(),
        iterations: MAX_NEWTON_ITERATIONS,
        residual,
    })
}

/// Max-norm of the dimensionless net force on the ions.
pub fn residual_force(positions: &PositionList) -> f64 {
    coulomb_gradient(&positions.dimensionless()).amax()
}

/// Hessian of the potential for one direction in units of `m omega_z^2`.
pub fn hessian(trap: &TrapParameters, positions: &PositionList, direction: Direction) -> DMatrix<f64> {
    let u = positions.dimensionless();
    match direction {
        Direction::Axial => axial_hessian(&u),
        radial => {
            let ratio = trap.direction_frequency(radial) / trap.omega_z;
            let n = u.len();
            DMatrix::identity(n, n) * (ratio * ratio) - coulomb_curvature(&u)
        }
    }
}

/// Diagonalize the Hessian of one direction.
pub fn normal_modes(
    trap: &TrapParameters,
    positions: &PositionList,
    direction: Direction,
) -> Result<ModeSpectrum> {
    trap.validate()?;
    if positions.len() != trap.ion_count {
        return Err(Error::invalid(
            "positions",
            format!("{} positions for {} ions", positions.len(), trap.ion_count),
        ));
    }
    let h = hessian(trap, positions, direction);
    let n = h.nrows();
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let lowest = eig.eigenvalues[order[0]];
    if lowest <= 0.0 {
        let curvature = coulomb_curvature(&positions.dimensionless());
        let kmax = SymmetricEigen::new(curvature).eigenvalues.max();
        return Err(Error::ZigzagInstability {
            direction: direction.to_string(),
            anisotropy: trap.direction_frequency(direction) / trap.omega_z,
            critical: kmax.sqrt(),
        });
    }

    let mut vectors = DMatrix::zeros(n, n);
    let mut frequencies = Vec::with_capacity(n);
    for (m, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(m, &v);
        frequencies.push(trap.omega_z * eig.eigenvalues[k].sqrt());
    }
    Ok(ModeSpectrum {
        direction,
        frequencies,
        eigenvectors: vectors,
        lamb_dicke: None,
        ion_mass: trap.ion_mass,
    })
}

/// Convenience: positions and the normal modes of one direction, with
/// Lamb-Dicke parameters for a wavevector projection `k_projection`.
pub fn modes_with_lamb_dicke(
    trap: &TrapParameters,
    positions: &PositionList,
    direction: Direction,
    k_projection: f64,
) -> Result<ModeSpectrum> {
    normal_modes(trap, positions, direction)?.with_lamb_dicke(k_projection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{CA40_MASS, QUBIT_WAVELENGTH};
    use std::f64::consts::PI;

    fn trap(n: usize) -> TrapParameters {
        TrapParameters {
            omega_x: 2.0 * PI * 2.93e6,
            omega_y: 2.0 * PI * 2.89e6,
            omega_z: 2.0 * PI * 127e3,
            ion_mass: CA40_MASS,
            ion_count: n,
            laser_wavelength: QUBIT_WAVELENGTH,
        }
    }

    #[test]
    fn single_ion_at_center() {
        let p = equilibrium_positions(&trap(1)).unwrap();
        assert_eq!(p.as_slice(), &[0.0]);
    }

    #[test]
    fn two_ions_match_closed_form() {
        let t = trap(2);
        let p = equilibrium_positions(&t).unwrap();
        let expected = 0.5f64.powf(2.0 / 3.0) * t.length_scale();
        assert!((p.as_slice()[1] - expected).abs() < 1e-8 * expected);
        assert!((p.as_slice()[0] + expected).abs() < 1e-8 * expected);
    }

    #[test]
    fn positions_symmetric_and_force_free() {
        for n in [3, 7, 20, 51] {
            let p = equilibrium_positions(&trap(n)).unwrap();
            let z = p.as_slice();
            for i in 0..n {
                assert!((z[i] + z[n - 1 - i]).abs() < 1e-12 * p.span());
            }
            assert!(residual_force(&p) < 1e-9);
        }
    }

    #[test]
    fn rejects_invalid_trap() {
        let mut t = trap(3);
        t.omega_z = 0.0;
        assert!(matches!(equilibrium_positions(&t), Err(Error::InvalidInput { .. })));
        t = trap(0);
        assert!(equilibrium_positions(&t).is_err());
    }

    #[test]
    fn axial_com_and_stretch() {
        let t = trap(2);
        let p = equilibrium_positions(&t).unwrap();
        let s = normal_modes(&t, &p, Direction::Axial).unwrap();
        assert!((s.frequencies[0] / t.omega_z - 1.0).abs() < 1e-10);
        assert!((s.frequencies[1] / t.omega_z - 3f64.sqrt()).abs() < 1e-10);
        let c = 0.5f64.sqrt();
        assert!((s.eigenvectors[(0, 0)] - c).abs() < 1e-10);
        assert!((s.eigenvectors[(1, 0)] - c).abs() < 1e-10);
    }

    #[test]
    fn radial_com_is_highest() {
        let t = trap(9);
        let p = equilibrium_positions(&t).unwrap();
        let s = normal_modes(&t, &p, Direction::RadialX).unwrap();
        let top = s.mode_count() - 1;
        assert!((s.frequencies[top] / t.omega_x - 1.0).abs() < 1e-12);
        for i in 0..9 {
            assert!((s.eigenvectors[(i, top)] - 1.0 / 3.0).abs() < 1e-9);
        }
        assert!(s.frequencies.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn zigzag_reports_critical_anisotropy() {
        let mut t = trap(30);
        t.omega_x = 2.0 * PI * 600e3;
        let p = equilibrium_positions(&t).unwrap();
        match normal_modes(&t, &p, Direction::RadialX) {
            Err(Error::ZigzagInstability { anisotropy, critical, .. }) => {
                assert!(anisotropy < critical);
                // raising the radial frequency just above the critical value stabilizes
                let mut stable = t;
                stable.omega_x = t.omega_z * critical * 1.001;
                assert!(normal_modes(&stable, &p, Direction::RadialX).is_ok());
            }
            other => panic!("expected zigzag error, got {other:?}"),
        }
    }

    #[test]
    fn orthonormal_eigenvectors_and_trace() {
        let t = trap(15);
        let p = equilibrium_positions(&t).unwrap();
        for dir in [Direction::Axial, Direction::RadialX, Direction::RadialY] {
            let s = normal_modes(&t, &p, dir).unwrap();
            let b = &s.eigenvectors;
            let id = b.transpose() * b;
            assert!((id - DMatrix::<f64>::identity(15, 15)).amax() < 1e-10);
        }
        let s = normal_modes(&t, &p, Direction::Axial).unwrap();
        let sum: f64 = s.frequencies.iter().map(|w| (w / t.omega_z).powi(2)).sum();
        let trace = hessian(&t, &p, Direction::Axial).trace();
        assert!((sum - trace).abs() < 1e-9 * trace);
    }

    #[test]
    fn lamb_dicke_single_ion_and_com() {
        let mut t = trap(1);
        t.omega_z = 2.0 * PI * 2.93e6;
        let p = equilibrium_positions(&t).unwrap();
        let s = normal_modes(&t, &p, Direction::Axial).unwrap();
        let k = t.wavevector();
        let s = s.with_lamb_dicke(k).unwrap();
        let eta = s.lamb_dicke.unwrap()[(0, 0)];
        let oracle = k * (HBAR / (2.0 * CA40_MASS * t.omega_z)).sqrt();
        assert!((eta - oracle).abs() < 1e-15);
        assert!((eta - 0.0566).abs() < 5e-4);

        let t = trap(8);
        let p = equilibrium_positions(&t).unwrap();
        let s = modes_with_lamb_dicke(&t, &p, Direction::RadialX, k).unwrap();
        let eta = s.lamb_dicke.unwrap();
        let single = k * (HBAR / (2.0 * CA40_MASS * t.omega_x)).sqrt();
        for i in 0..8 {
            assert!((eta[(i, 7)] - single / 8f64.sqrt()).abs() < 1e-12);
        }

        let zero = modes_with_lamb_dicke(&t, &p, Direction::RadialY, 0.0).unwrap();
        assert!(zero.lamb_dicke.unwrap().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn csv_export_layout() {
        let t = trap(3);
        let p = equilibrium_positions(&t).unwrap();
        let s = normal_modes(&t, &p, Direction::Axial).unwrap();
        let csv = s.to_table().to_csv();
        let first = csv.lines().next().unwrap();
        assert_eq!(first, "mode,frequency_hz,b_1,b_2,b_3");
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("1,127000,"));
    }
}
