//! Spin-spin couplings mediated by the transverse modes, and the crosstalk
//! model of the single-ion addressing beam.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chain::{ModeSpectrum, PositionList};
use crate::error::{Error, Result};
use crate::fit::weighted_line;
use crate::io::Table;

/// Default resonance guard, 2 pi x 10 Hz.
pub const DEFAULT_RESONANCE_GUARD: f64 = 2.0 * std::f64::consts::PI * 10.0;

/// Bichromatic drive parameters.
///
/// `mode_detunings[m]` is `mu - omega_m`, with `mu` half the splitting of the
/// two tones. A positive value therefore means the tones sit outside the
/// sideband of mode `m`; couplings mediated by such modes carry the sign of
/// `eta_i eta_j`. Modes are indexed in the order the spectra are passed to
/// [`spin_spin_matrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveParameters {
    /// Rabi frequency of each ion, rad/s.
    pub rabi: Vec<f64>,
    /// Qubit transition frequency, rad/s. Reference only.
    pub qubit_frequency: f64,
    /// Centerline detuning `delta`, rad/s.
    pub centerline_detuning: f64,
    /// Detuning from every mode entering the sum, rad/s.
    pub mode_detunings: Vec<f64>,
    /// Smallest admissible `|Delta_m|`, rad/s.
    pub resonance_guard: f64,
}

impl DriveParameters {
    /// Detunings from a beat note `mu` (half the tone splitting), rad/s.
    pub fn from_beat_note(
        rabi: Vec<f64>,
        centerline_detuning: f64,
        beat_note: f64,
        spectra: &[&ModeSpectrum],
    ) -> Self {
        let mode_detunings = spectra
            .iter()
            .flat_map(|s| s.frequencies.iter().map(move |w| beat_note - w))
            .collect();
        DriveParameters {
            rabi,
            qubit_frequency: 0.0,
            centerline_detuning,
            mode_detunings,
            resonance_guard: DEFAULT_RESONANCE_GUARD,
        }
    }

    /// Drive from the absolute tone frequencies `omega_plus`, `omega_minus`
    /// and the qubit frequency `omega_0`.
    ///
    /// The centerline detuning is the mean tone frequency minus `omega_0`.
    pub fn from_tones(
        rabi: Vec<f64>,
        omega_plus: f64,
        omega_minus: f64,
        omega_0: f64,
        spectra: &[&ModeSpectrum],
    ) -> Self {
        let delta = 0.5 * (omega_plus + omega_minus) - omega_0;
        let mu = 0.5 * (omega_plus - omega_minus);
        let mut d = Self::from_beat_note(rabi, delta, mu, spectra);
        d.qubit_frequency = omega_0;
        d
    }

    pub fn uniform_rabi(n: usize, rabi: f64) -> Vec<f64> {
        vec![rabi; n]
    }
}

/// Ising couplings `J` (rad/s, symmetric, zero diagonal) and transverse field `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    pub j: DMatrix<f64>,
    pub field: f64,
}

impl CouplingMatrix {
    pub fn new(j: DMatrix<f64>, field: f64) -> Result<Self> {
        if !j.is_square() {
            return Err(Error::invalid("J", "must be square"));
        }
        let n = j.nrows();
        for a in 0..n {
            if j[(a, a)] != 0.0 {
                return Err(Error::invalid("J", "diagonal must vanish"));
            }
            for b in 0..a {
                if j[(a, b)] != j[(b, a)] {
                    return Err(Error::invalid("J", "must be symmetric"));
                }
            }
        }
        Ok(CouplingMatrix { j, field })
    }

    /// Couplings of a pure power law `J_ij = j0 / |i-j|^alpha`.
    pub fn power_law(n: usize, j0: f64, alpha: f64, field: f64) -> Self {
        let j = DMatrix::from_fn(n, n, |a, b| {
            if a == b {
                0.0
            } else {
                j0 / (a.abs_diff(b) as f64).powf(alpha)
            }
        });
        CouplingMatrix { j, field }
    }

    pub fn ion_count(&self) -> usize {
        self.j.nrows()
    }

    pub fn max_abs(&self) -> f64 {
        self.j.amax()
    }

    /// Rescale `J` so that `max |J_ij|` equals `target`; equivalent to scaling
    /// every Rabi frequency by `sqrt(target / max)`.
    pub fn scaled_to_max(&self, target: f64) -> Self {
        let m = self.max_abs();
        let s = if m > 0.0 { target / m } else { 0.0 };
        CouplingMatrix {
            j: &self.j * s,
            field: self.field,
        }
    }

    pub fn to_table(&self) -> Table {
        let n = self.ion_count();
        let mut table = Table::new((1..=n).map(|i| format!("ion_{i}")));
        for a in 0..n {
            table.push(self.j.row(a).iter().copied().collect());
        }
        table
    }

    pub fn to_json(&self, metadata: serde_json::Value) -> serde_json::Value {
        let rows: Vec<Vec<f64>> = (0..self.ion_count())
            .map(|a| self.j.row(a).iter().copied().collect())
            .collect();
        serde_json::json!({
            "j_rad_per_s": rows,
            "field_rad_per_s": self.field,
            "metadata": metadata,
        })
    }
}

/// Build `J_ij = (Omega_i Omega_j / 2) sum_m eta_im eta_jm / Delta_m` and `B = delta / 2`.
///
/// Every spectrum must carry Lamb-Dicke parameters. The mode sum runs over
/// all modes of all spectra, in order.
pub fn spin_spin_matrix(spectra: &[&ModeSpectrum], drive: &DriveParameters) -> Result<CouplingMatrix> {
    let n = drive.rabi.len();
    let total_modes: usize = spectra.iter().map(|s| s.mode_count()).sum();
    if total_modes != drive.mode_detunings.len() {
        return Err(Error::invalid(
            "mode_detunings",
            format!("{} detunings for {} modes", drive.mode_detunings.len(), total_modes),
        ));
    }
    if let Some(r) = drive.rabi.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::invalid("rabi", format!("must be non-negative, got {r}")));
    }
    for (m, &d) in drive.mode_detunings.iter().enumerate() {
        if !(d.abs() >= drive.resonance_guard) {
            return Err(Error::NearResonance {
                mode: m,
                detuning: d,
                guard: drive.resonance_guard,
            });
        }
    }

    let mut j = DMatrix::zeros(n, n);
    let mut mode = 0;
    for spectrum in spectra {
        let eta = spectrum
            .lamb_dicke
            .as_ref()
            .ok_or_else(|| Error::invalid("spectrum", "Lamb-Dicke parameters not computed"))?;
        if eta.nrows() != n {
            return Err(Error::invalid(
                "spectrum",
                format!("{} ions in spectrum, {} Rabi frequencies", eta.nrows(), n),
            ));
        }
        for m in 0..spectrum.mode_count() {
            let inv = 1.0 / drive.mode_detunings[mode];
            for a in 0..n {
                for b in (a + 1)..n {
                    j[(a, b)] += eta[(a, m)] * eta[(b, m)] * inv;
                }
            }
            mode += 1;
        }
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let v = 0.5 * drive.rabi[a] * drive.rabi[b] * j[(a, b)];
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
    }
    Ok(CouplingMatrix {
        j,
        field: 0.5 * drive.centerline_detuning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    /// Exponent `alpha` in `J ~ J0 / d^alpha`.
    pub exponent: f64,
    /// `J0`, rad/s.
    pub prefactor: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
}

/// Fit the distance-averaged `|J_ij|` to a power law on log-log axes.
pub fn powerlaw_fit(coupling: &CouplingMatrix) -> Result<PowerLawFit> {
    let n = coupling.ion_count();
    if n < 4 {
        return Err(Error::invalid("J", "power-law fit needs at least 4 ions"));
    }
    let mut x = Vec::with_capacity(n - 1);
    let mut y = Vec::with_capacity(n - 1);
    for d in 1..n {
        let mean = (0..n - d).map(|a| coupling.j[(a, a + d)].abs()).sum::<f64>() / (n - d) as f64;
        if !(mean > 0.0) {
            return Err(Error::NonPositiveCoupling { distance: d });
        }
        x.push((d as f64).ln());
        y.push(mean.ln());
    }
    let fit = weighted_line(&x, &y, &vec![1.0; x.len()])?;
    Ok(PowerLawFit {
        exponent: -fit.slope,
        prefactor: fit.intercept.exp(),
        residual: (fit.chi2 / x.len() as f64).sqrt(),
    })
}

/// Spurious beam at the AOD double-frequency deflection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AodGhost {
    /// Displacement of the ghost spot from the main spot, m.
    pub offset: f64,
    /// Peak field amplitude of the ghost relative to the main spot.
    pub relative_amplitude: f64,
}

/// Field profile of the focused addressing beam: Gaussian spot, constant
/// pedestal, and an optional displaced ghost spot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AddressingBeam {
    /// 1/e^2 intensity radius, m.
    pub waist: f64,
    /// Spot center along the string, m.
    pub center: f64,
    /// Constant relative field amplitude.
    pub pedestal_floor: f64,
    pub aod_ghost: Option<AodGhost>,
}

impl AddressingBeam {
    pub fn validate(&self) -> Result<()> {
        if !(self.waist > 0.0) {
            return Err(Error::invalid("waist", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.pedestal_floor) {
            return Err(Error::invalid("pedestal_floor", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Relative field amplitude at position `z` (unnormalized).
    pub fn field(&self, z: f64) -> f64 {
        let spot = |c: f64| (-((z - c) / self.waist).powi(2)).exp();
        let mut f = spot(self.center) + self.pedestal_floor;
        if let Some(g) = self.aod_ghost {
            f += g.relative_amplitude * spot(self.center + g.offset);
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrosstalkKind {
    /// Ratio of Rabi frequencies (field amplitudes).
    Resonant,
    /// Ratio of AC-Stark shifts (intensities).
    AcStark,
}

/// Crosstalk ratio at every ion relative to the addressed ion (the ion
/// nearest the beam center, whose ratio is exactly 1).
pub fn crosstalk_map(beam: &AddressingBeam, positions: &PositionList, kind: CrosstalkKind) -> Result<Vec<f64>> {
    beam.validate()?;
    let z = positions.as_slice();
    let addressed = z
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - beam.center).abs().total_cmp(&(b.1 - beam.center).abs()))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::invalid("positions", "empty ion string"))?;
    let reference = beam.field(z[addressed]);
    let resonant = z.iter().enumerate().map(|(i, &zi)| {
        if i == addressed {
            1.0
        } else {
            beam.field(zi) / reference
        }
    });
    Ok(match kind {
        CrosstalkKind::Resonant => resonant.collect(),
        CrosstalkKind::AcStark => resonant.map(|r| r * r).collect(),
    })
}
