//! Pi-pulse sequences, their filter functions, the CPMG response to a
//! line-synchronous field modulation, sensing fits and the feedforward
//! compensation loop.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constants::QUBIT_FIELD_SENSITIVITY_HZ_PER_UG;
use crate::error::{Error, Result};
use crate::fit::levenberg_marquardt;
use crate::io::Table;
use crate::rng;

/// Below this value of `omega * tau` the filter function is evaluated from
/// its Taylor series.
const SERIES_THRESHOLD: f64 = 1e-6;

/// Period of the mains line cycle, s.
pub const LINE_PERIOD: f64 = 0.02;

/// Train of instantaneous pi pulses embedded between two pi/2 pulses at 0 and `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    tau: f64,
    delta: Vec<f64>,
    /// Duration of one pi pulse, s. The filter function treats pulses as instantaneous.
    pub pi_time: f64,
}

impl PulseSequence {
    pub fn new(tau: f64, delta: Vec<f64>) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid("tau", "must be positive"));
        }
        if delta.is_empty() {
            return Err(Error::invalid("delta", "at least one pulse"));
        }
        let ordered = delta.windows(2).all(|w| w[0] < w[1]);
        if !ordered || delta[0] <= 0.0 || delta[delta.len() - 1] >= 1.0 {
            return Err(Error::invalid("delta", "fractional pulse times must increase strictly inside (0, 1)"));
        }
        Ok(PulseSequence { tau, delta, pi_time: 0.0 })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn pulse_count(&self) -> usize {
        self.delta.len()
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }
}

/// CPMG timing: pulse `j` at `tau (j - 1/2) / n_pulses`.
pub fn cpmg(n_pulses: usize, tau: f64) -> Result<PulseSequence> {
    if n_pulses == 0 {
        return Err(Error::invalid("n_pulses", "must be at least 1"));
    }
    let delta = (1..=n_pulses).map(|j| (j as f64 - 0.5) / n_pulses as f64).collect();
    PulseSequence::new(tau, delta)
}

/// Complex filter function at frequency `f` (Hz). Finite at `f = 0`.
pub fn filter_function(seq: &PulseSequence, f: f64) -> Complex64 {
    let n = seq.pulse_count();
    let tail = if n.is_multiple_of(2) { -1.0 } else { 1.0 };
    let omega = TAU * f;
    let x = omega * seq.tau;
    let norm = (TAU).sqrt();
    if x.abs() < SERIES_THRESHOLD {
        // bracket = sum_k m_k (i x)^k / k! with m_0 = 0, divided by i x
        let moment = |k: i32| -> f64 {
            let pulses: f64 = seq
                .delta
                .iter()
                .enumerate()
                .map(|(j, d)| if j % 2 == 0 { -d.powi(k) } else { d.powi(k) })
                .sum();
            tail + 2.0 * pulses
        };
        let mut sum = Complex64::new(0.0, 0.0);
        let mut term = Complex64::new(1.0, 0.0);
        for k in 1..=4 {
            if k > 1 {
                term *= Complex64::new(0.0, x) / k as f64;
            }
            sum += term * moment(k);
        }
        return sum * seq.tau / norm;
    }
    filter_direct(seq, f)
}

fn filter_direct(seq: &PulseSequence, f: f64) -> Complex64 {
    let tail = if seq.pulse_count().is_multiple_of(2) { -1.0 } else { 1.0 };
    let omega = TAU * f;
    let x = omega * seq.tau;
    let mut bracket = Complex64::new(1.0, 0.0) + Complex64::from_polar(tail, x);
    for (j, d) in seq.delta.iter().enumerate() {
        let sign = if j % 2 == 0 { -2.0 } else { 2.0 };
        bracket += Complex64::from_polar(sign, x * d);
    }
    bracket / Complex64::new(0.0, TAU.sqrt() * omega)
}

/// One sinusoidal modulation `a sin(2 pi f t + phase)` of the qubit angular frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseComponent {
    /// Hz.
    pub frequency: f64,
    /// rad/s.
    pub amplitude: f64,
    /// rad.
    pub phase: f64,
}

impl NoiseComponent {
    pub fn new(frequency: f64, amplitude: f64, phase: f64) -> Result<Self> {
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::invalid("frequency", "must be positive"));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::invalid("amplitude", "must be non-negative"));
        }
        Ok(NoiseComponent { frequency, amplitude, phase })
    }

    /// Component with the amplitude given as a magnetic field in microgauss.
    pub fn from_field(frequency: f64, microgauss: f64, phase: f64) -> Result<Self> {
        NoiseComponent::new(frequency, microgauss_to_amplitude(microgauss)?, phase)
    }

    pub fn phasor(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase)
    }

    fn from_phasor(frequency: f64, z: Complex64) -> Self {
        NoiseComponent {
            frequency,
            amplitude: z.norm(),
            phase: z.arg(),
        }
    }

    pub fn field_microgauss(&self) -> f64 {
        self.amplitude / TAU / QUBIT_FIELD_SENSITIVITY_HZ_PER_UG
    }

    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * (TAU * self.frequency * t + self.phase).sin()
    }
}

/// Line-noise levels before compensation: 37.2, 9.3 and 23.3 uG at 50, 150
/// and 250 Hz. The phases are arbitrary but fixed.
pub fn reference_line_noise() -> Vec<NoiseComponent> {
    [(50.0, 37.2, 0.7), (150.0, 9.3, -2.1), (250.0, 23.3, 2.6)]
        .iter()
        .map(|&(f, b, p)| NoiseComponent::from_field(f, b, p).expect("valid reference noise"))
        .collect()
}

/// Angular modulation amplitude (rad/s) to magnetic field (microgauss).
pub fn amplitude_to_microgauss(amplitude: f64) -> Result<f64> {
    if !(amplitude >= 0.0) {
        return Err(Error::invalid("amplitude", "must be non-negative"));
    }
    Ok(amplitude / TAU / QUBIT_FIELD_SENSITIVITY_HZ_PER_UG)
}

pub fn microgauss_to_amplitude(microgauss: f64) -> Result<f64> {
    if !(microgauss >= 0.0) {
        return Err(Error::invalid("field", "must be non-negative"));
    }
    Ok(microgauss * QUBIT_FIELD_SENSITIVITY_HZ_PER_UG * TAU)
}

fn inner_phase(component: &NoiseComponent, seq: &PulseSequence, t0: f64) -> f64 {
    let ff = filter_function(seq, component.frequency);
    TAU.sqrt() * ff.norm() * component.amplitude * (TAU * component.frequency * t0 + component.phase + ff.arg()).sin()
}

/// Upper-state probability after the sequence started at `t0` with a single
/// noise component present.
pub fn cpmg_response(noise: &NoiseComponent, contrast: f64, t0: f64, seq: &PulseSequence) -> f64 {
    0.5 + 0.5 * contrast * inner_phase(noise, seq, t0).sin()
}

/// Same with several components; their accumulated phases add.
pub fn cpmg_signal(components: &[NoiseComponent], contrast: f64, t0: f64, seq: &PulseSequence) -> f64 {
    let phi: f64 = components.iter().map(|c| inner_phase(c, seq, t0)).sum();
    0.5 + 0.5 * contrast * phi.sin()
}

/// A start-time scan of the sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SenseScan {
    pub t0: Vec<f64>,
    pub p_up: Vec<f64>,
}

impl SenseScan {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["t0_s", "p_up"]);
        for (a, b) in self.t0.iter().zip(&self.p_up) {
            t.push(vec![*a, *b]);
        }
        t
    }
}

/// Scan `points` start times over one period of `probe_frequency`. `shots`
/// of `None` returns exact probabilities, otherwise binomial estimates.
pub fn simulate_scan(
    components: &[NoiseComponent],
    contrast: f64,
    seq: &PulseSequence,
    probe_frequency: f64,
    points: usize,
    shots: Option<u64>,
    seed: u64,
) -> Result<SenseScan> {
    if !(0.0..=1.0).contains(&contrast) {
        return Err(Error::invalid("contrast", "must lie in [0, 1]"));
    }
    if points < 8 {
        return Err(Error::invalid("points", "at least 8 scan points"));
    }
    let mut stream = rng::stream(seed, 0);
    let mut t0 = Vec::with_capacity(points);
    let mut p_up = Vec::with_capacity(points);
    for i in 0..points {
        let t = i as f64 / (points as f64 * probe_frequency);
        let p = cpmg_signal(components, contrast, t, seq).clamp(0.0, 1.0);
        let value = match shots {
            None => p,
            Some(0) => return Err(Error::invalid("shots", "must be positive")),
            Some(n) => {
                let k = Binomial::new(n, p).map_err(|e| Error::invalid("p_up", e.to_string()))?.sample(&mut stream);
                k as f64 / n as f64
            }
        };
        t0.push(t);
        p_up.push(value);
    }
    Ok(SenseScan { t0, p_up })
}

/// Fitted single-component response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SenseResult {
    pub frequency: f64,
    pub amplitude: f64,
    pub amplitude_sigma: f64,
    pub phase: f64,
    pub phase_sigma: f64,
    pub contrast: f64,
    pub contrast_sigma: f64,
    /// Residual sum of squares of the fit.
    pub residual: f64,
}

impl SenseResult {
    pub fn component(&self) -> NoiseComponent {
        NoiseComponent {
            frequency: self.frequency,
            amplitude: self.amplitude,
            phase: self.phase,
        }
    }
}

/// Options of the sensing fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SenseOptions {
    /// Largest inner phase amplitude covered by the starting grid, rad.
    pub max_inner_amplitude: f64,
    pub amplitude_steps: usize,
    pub phase_starts: usize,
    /// Number of best grid points refined by least squares.
    pub refinements: usize,
}

impl Default for SenseOptions {
    fn default() -> Self {
        SenseOptions {
            max_inner_amplitude: 4.0 * PI,
            amplitude_steps: 256,
            phase_starts: 16,
            refinements: 8,
        }
    }
}

fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    if w > PI { w - TAU } else { w }
}

/// Fit `A`, phase and contrast of a single component at `frequency` to a scan.
pub fn sense(scan: &SenseScan, seq: &PulseSequence, frequency: f64) -> Result<SenseResult> {
    sense_with(scan, seq, frequency, &SenseOptions::default())
}

pub fn sense_with(scan: &SenseScan, seq: &PulseSequence, frequency: f64, opts: &SenseOptions) -> Result<SenseResult> {
    let n = scan.t0.len();
    if n != scan.p_up.len() {
        return Err(Error::invalid("scan", "t0 and p_up lengths differ"));
    }
    if n < 8 {
        return Err(Error::invalid("scan", "at least 8 points"));
    }
    if !(frequency > 0.0) {
        return Err(Error::invalid("frequency", "must be positive"));
    }
    let span = scan.t0.iter().cloned().fold(f64::MIN, f64::max) - scan.t0.iter().cloned().fold(f64::MAX, f64::min);
    if span * frequency < 0.5 {
        return Err(Error::invalid("scan", "must cover a noise period"));
    }
    let lo = scan.p_up.iter().cloned().fold(f64::MAX, f64::min);
    let hi = scan.p_up.iter().cloned().fold(f64::MIN, f64::max);
    if hi - lo < 1e-12 {
        return Err(Error::NoModulation);
    }
    let ff = filter_function(seq, frequency);
    let gain = TAU.sqrt() * ff.norm();
    if gain < 1e-15 * seq.tau() {
        return Err(Error::invalid("frequency", "sequence filter vanishes at the probed frequency"));
    }
    let arg = ff.arg();
    let centered: Vec<f64> = scan.p_up.iter().map(|p| p - 0.5).collect();
    let theta: Vec<f64> = scan.t0.iter().map(|t| TAU * frequency * t + arg).collect();

    // grid over inner amplitude and phase, contrast profiled out linearly
    let mut grid: Vec<(f64, f64, f64, f64)> = Vec::new();
    for ia in 1..=opts.amplitude_steps {
        let a = opts.max_inner_amplitude * ia as f64 / opts.amplitude_steps as f64;
        for ip in 0..opts.phase_starts {
            let phi = TAU * ip as f64 / opts.phase_starts as f64 - PI;
            let (mut sy, mut ss) = (0.0, 0.0);
            for (th, y) in theta.iter().zip(&centered) {
                let s = 0.5 * (a * (th + phi).sin()).sin();
                sy += s * y;
                ss += s * s;
            }
            let c = (sy / ss).clamp(0.0, 1.0);
            let rss: f64 = theta
                .iter()
                .zip(&centered)
                .map(|(th, y)| {
                    let r = y - 0.5 * c * (a * (th + phi).sin()).sin();
                    r * r
                })
                .sum();
            grid.push((rss, a, phi, c));
        }
    }
    grid.sort_by(|x, y| x.0.total_cmp(&y.0));

    let model = |p: &[f64]| -> (DVector<f64>, DMatrix<f64>) {
        let (a, phi, c) = (p[0], p[1], p[2]);
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 3);
        for (i, (th, y)) in theta.iter().zip(&centered).enumerate() {
            let s = (th + phi).sin();
            let inner = a * s;
            r[i] = 0.5 * c * inner.sin() - y;
            j[(i, 0)] = 0.5 * c * inner.cos() * s;
            j[(i, 1)] = 0.5 * c * inner.cos() * a * (th + phi).cos();
            j[(i, 2)] = 0.5 * inner.sin();
        }
        (r, j)
    };
    let project = |p: &mut [f64]| {
        p[0] = p[0].max(0.0);
        p[2] = p[2].clamp(0.0, 1.0);
    };
    let mut best: Option<crate::fit::LmResult> = None;
    for &(_, a, phi, c) in grid.iter().take(opts.refinements.max(1)) {
        let fit = levenberg_marquardt(model, project, &[a, phi, c], 200);
        if best.as_ref().is_none_or(|b| fit.rss < b.rss) {
            best = Some(fit);
        }
    }
    let fit = best.expect("at least one refinement");
    let dof = (n as f64 - 3.0).max(1.0);
    let scale = fit.rss / dof;
    let sigma = |k: usize| {
        fit.covariance
            .as_ref()
            .map(|c| (c[(k, k)] * scale).max(0.0).sqrt())
            .unwrap_or(f64::INFINITY)
    };
    Ok(SenseResult {
        frequency,
        amplitude: fit.params[0] / gain,
        amplitude_sigma: sigma(0) / gain,
        phase: wrap_phase(fit.params[1]),
        phase_sigma: sigma(1),
        contrast: fit.params[2],
        contrast_sigma: sigma(2),
        residual: fit.rss,
    })
}

/// Settings of the simulated sense-and-cancel loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationConfig {
    /// Line harmonics to cancel, Hz.
    pub targets: Vec<f64>,
    /// CPMG duration; each harmonic `f` is probed with `round(2 f tau)` pulses.
    pub tau: f64,
    pub points: usize,
    pub shots: Option<u64>,
    /// Broadband contrast of the simulated experiment.
    pub contrast: f64,
    pub seed: u64,
    pub max_rounds: usize,
    /// Sensed amplitudes below this (rad/s) are left alone.
    pub tolerance: f64,
    /// Standard deviation of the random phase wander of the ambient field between rounds, rad.
    pub phase_drift: f64,
}

impl Default for CompensationConfig {
    fn default() -> Self {
        CompensationConfig {
            targets: vec![50.0, 150.0, 250.0],
            tau: 0.02,
            points: 100,
            shots: Some(100),
            contrast: 1.0,
            seed: 0,
            max_rounds: 4,
            tolerance: TAU * 2.0,
            phase_drift: 0.0,
        }
    }
}

/// One sensing call of the loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SenseLogEntry {
    pub round: usize,
    pub frequency: f64,
    pub pulses: usize,
    pub sensed_amplitude: f64,
    pub sensed_phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompensationReport {
    pub ambient: Vec<NoiseComponent>,
    /// Feedforward field, one out-of-phase sinusoid per target.
    pub waveform: Vec<NoiseComponent>,
    /// Ambient plus feedforward at the target frequencies.
    pub residual: Vec<NoiseComponent>,
    pub rounds: usize,
    pub converged: bool,
    pub log: Vec<SenseLogEntry>,
}

impl CompensationReport {
    /// Residual amplitude over initial amplitude for each target.
    pub fn suppression(&self) -> Vec<f64> {
        self.residual
            .iter()
            .map(|r| {
                let initial: f64 = self
                    .ambient
                    .iter()
                    .filter(|a| a.frequency == r.frequency)
                    .map(|a| a.amplitude)
                    .sum();
                r.amplitude / initial
            })
            .collect()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new([
            "frequency_hz",
            "ambient_microgauss",
            "residual_microgauss",
            "waveform_amplitude_rad_s",
            "waveform_phase_rad",
        ]);
        for (w, r) in self.waveform.iter().zip(&self.residual) {
            let ambient: f64 = self
                .ambient
                .iter()
                .filter(|a| a.frequency == w.frequency)
                .map(|a| a.field_microgauss())
                .sum();
            t.push(vec![w.frequency, ambient, r.field_microgauss(), w.amplitude, w.phase]);
        }
        t
    }
}

/// Total field at each target frequency: ambient plus feedforward.
fn net_field(ambient: &[NoiseComponent], waveform: &[Complex64], targets: &[f64]) -> Vec<NoiseComponent> {
    let mut out: Vec<NoiseComponent> = ambient.iter().filter(|a| !targets.contains(&a.frequency)).copied().collect();
    for (f, w) in targets.iter().zip(waveform) {
        let z: Complex64 = ambient.iter().filter(|a| a.frequency == *f).map(|a| a.phasor()).sum::<Complex64>() + w;
        out.push(NoiseComponent::from_phasor(*f, z));
    }
    out
}

/// Sense each target harmonic (highest frequency first) and subtract it
/// with a feedforward sinusoid, repeating until every sensed amplitude is
/// below the tolerance or `max_rounds` is reached. On non-convergence the
/// round with the smallest worst-case residual is reported.
pub fn compensate(ambient: &[NoiseComponent], config: &CompensationConfig) -> Result<CompensationReport> {
    if config.targets.is_empty() {
        return Err(Error::invalid("targets", "at least one frequency"));
    }
    if config.max_rounds == 0 {
        return Err(Error::invalid("max_rounds", "must be at least 1"));
    }
    let mut targets = config.targets.clone();
    targets.sort_by(|a, b| b.total_cmp(a));
    if targets.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("targets", "frequencies must be distinct"));
    }
    let mut sequences = Vec::with_capacity(targets.len());
    for &f in &targets {
        let pulses = (2.0 * f * config.tau).round() as usize;
        if pulses == 0 {
            return Err(Error::invalid("targets", format!("{f} Hz is too low for tau = {} s", config.tau)));
        }
        sequences.push(cpmg(pulses, config.tau)?);
    }
    let mut ambient = ambient.to_vec();
    let mut waveform = vec![Complex64::new(0.0, 0.0); targets.len()];
    let mut log = Vec::new();
    let mut drift = rng::stream(config.seed, u64::MAX);
    let worst = |net: &[NoiseComponent], amb: &[NoiseComponent]| -> f64 {
        targets
            .iter()
            .map(|f| {
                let initial: f64 = amb.iter().filter(|a| a.frequency == *f).map(|a| a.amplitude).sum();
                let res: f64 = net.iter().filter(|a| a.frequency == *f).map(|a| a.amplitude).sum();
                if initial > 0.0 { res / initial } else { res }
            })
            .fold(0.0, f64::max)
    };
    let mut best: Option<(f64, Vec<Complex64>, Vec<NoiseComponent>, usize)> = None;
    let mut converged = false;
    let mut rounds = 0;
    for round in 0..config.max_rounds {
        rounds = round + 1;
        let mut quiet = true;
        for (k, (&f, seq)) in targets.iter().zip(&sequences).enumerate() {
            let net = net_field(&ambient, &waveform, &targets);
            let index = (round * targets.len() + k) as u64;
            let scan = simulate_scan(&net, config.contrast, seq, f, config.points, config.shots, rng_seed(config.seed, index))?;
            let sensed = match sense(&scan, seq, f) {
                Ok(s) => s.component(),
                Err(Error::NoModulation) => NoiseComponent {
                    frequency: f,
                    amplitude: 0.0,
                    phase: 0.0,
                },
                Err(e) => return Err(e),
            };
            log.push(SenseLogEntry {
                round: rounds,
                frequency: f,
                pulses: seq.pulse_count(),
                sensed_amplitude: sensed.amplitude,
                sensed_phase: sensed.phase,
            });
            if sensed.amplitude > config.tolerance {
                quiet = false;
                waveform[k] -= sensed.phasor();
            }
        }
        let net = net_field(&ambient, &waveform, &targets);
        let score = worst(&net, &ambient);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, waveform.clone(), ambient.clone(), rounds));
        }
        if quiet {
            converged = true;
            break;
        }
        if config.phase_drift > 0.0 {
            for a in ambient.iter_mut() {
                let step: f64 = drift.sample(StandardNormal);
                a.phase = wrap_phase(a.phase + config.phase_drift * step);
            }
        }
    }
    let (waveform, ambient_used) = if converged {
        (waveform, ambient)
    } else {
        let (_, w, a, _) = best.expect("at least one round");
        (w, a)
    };
    let residual: Vec<NoiseComponent> = net_field(&ambient_used, &waveform, &targets)
        .into_iter()
        .filter(|c| targets.contains(&c.frequency))
        .collect();
    let initial: Vec<NoiseComponent> = ambient_used.clone();
    Ok(CompensationReport {
        ambient: initial,
        waveform: targets.iter().zip(&waveform).map(|(f, w)| NoiseComponent::from_phasor(*f, *w)).collect(),
        residual,
        rounds,
        converged,
        log,
    })
}

fn rng_seed(seed: u64, index: u64) -> u64 {
    rng::stream(seed, index).random()
}

/// Which parts of the line-noise mitigation are active in a Ramsey run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RamseyScenario {
    TriggerOnCompOn,
    CompOnly,
    BothOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamseyConfig {
    pub probe_time: f64,
    /// Second-pulse phases spread evenly over one turn.
    pub phase_points: usize,
    pub shots: Option<u64>,
    pub seed: u64,
    /// Contrast in the absence of line noise.
    pub base_contrast: f64,
    /// Start time within the line cycle when triggered, s.
    pub trigger_delay: f64,
    /// Quadrature points over the line cycle when untriggered.
    pub cycle_samples: usize,
}

impl Default for RamseyConfig {
    fn default() -> Self {
        RamseyConfig {
            probe_time: 4.5e-3,
            phase_points: 16,
            shots: Some(100),
            seed: 0,
            base_contrast: 1.0,
            trigger_delay: 0.0,
            cycle_samples: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RamseyResult {
    pub scenario: RamseyScenario,
    pub contrast: f64,
    pub contrast_sigma: f64,
    pub phases: Vec<f64>,
    pub p_up: Vec<f64>,
}

/// Phase accumulated in a free evolution of length `probe` started at `t0`.
fn ramsey_phase(components: &[NoiseComponent], t0: f64, probe: f64) -> f64 {
    components
        .iter()
        .map(|c| {
            let w = TAU * c.frequency;
            c.amplitude / w * ((w * t0 + c.phase).cos() - (w * (t0 + probe) + c.phase).cos())
        })
        .sum()
}

/// Ramsey fringe over the second-pulse phase and its fitted contrast.
/// `ambient` is the uncompensated field, `waveform` the feedforward field.
pub fn ramsey_contrast(
    ambient: &[NoiseComponent],
    waveform: &[NoiseComponent],
    scenario: RamseyScenario,
    config: &RamseyConfig,
) -> Result<RamseyResult> {
    if !(config.probe_time > 0.0) {
        return Err(Error::invalid("probe_time", "must be positive"));
    }
    if config.phase_points < 3 || config.cycle_samples == 0 {
        return Err(Error::invalid("phase_points", "need at least 3 phases and one cycle sample"));
    }
    if !(0.0..=1.0).contains(&config.base_contrast) {
        return Err(Error::invalid("base_contrast", "must lie in [0, 1]"));
    }
    let mut field: Vec<NoiseComponent> = ambient.to_vec();
    if scenario != RamseyScenario::BothOff {
        field.extend_from_slice(waveform);
    }
    let starts: Vec<f64> = match scenario {
        RamseyScenario::TriggerOnCompOn => vec![config.trigger_delay],
        _ => (0..config.cycle_samples)
            .map(|i| LINE_PERIOD * i as f64 / config.cycle_samples as f64)
            .collect(),
    };
    let coherence: Complex64 = starts
        .iter()
        .map(|t| Complex64::from_polar(1.0, ramsey_phase(&field, *t, config.probe_time)))
        .sum::<Complex64>()
        / starts.len() as f64;
    let m = config.phase_points;
    let mut stream = rng::stream(config.seed, 0);
    let mut phases = Vec::with_capacity(m);
    let mut p_up = Vec::with_capacity(m);
    for i in 0..m {
        let theta = TAU * i as f64 / m as f64;
        let p = (0.5 * (1.0 + config.base_contrast * (coherence * Complex64::from_polar(1.0, -theta)).re)).clamp(0.0, 1.0);
        let value = match config.shots {
            None => p,
            Some(0) => return Err(Error::invalid("shots", "must be positive")),
            Some(n) => Binomial::new(n, p).map_err(|e| Error::invalid("p_up", e.to_string()))?.sample(&mut stream) as f64 / n as f64,
        };
        phases.push(theta);
        p_up.push(value);
    }
    // P = c + a cos(theta) + b sin(theta) on an even grid: Fourier projection
    let (mut a, mut b) = (0.0, 0.0);
    for (t, p) in phases.iter().zip(&p_up) {
        a += 2.0 * p * t.cos() / m as f64;
        b += 2.0 * p * t.sin() / m as f64;
    }
    let contrast = 2.0 * a.hypot(b);
    let contrast_sigma = match config.shots {
        None => 0.0,
        Some(n) => {
            let var: f64 = p_up
                .iter()
                .zip(&phases)
                .map(|(p, t)| {
                    let dir = if contrast > 0.0 { (a * t.cos() + b * t.sin()) / a.hypot(b) } else { 1.0 };
                    (p * (1.0 - p) / n as f64).max(0.25 / (n as f64 * n as f64)) * dir * dir
                })
                .sum();
            4.0 * var.sqrt() / m as f64
        }
    };
    Ok(RamseyResult {
        scenario,
        contrast,
        contrast_sigma,
        phases,
        p_up,
    })
}

/// `|F|` on a frequency grid, for plotting.
pub fn filter_table(seq: &PulseSequence, frequencies: &[f64]) -> Table {
    let mut t = Table::new(["frequency_hz", "abs_filter", "arg_filter"]);
    for &f in frequencies {
        let v = filter_function(seq, f);
        t.push(vec![f, v.norm(), v.arg()]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const T: f64 = 0.02;

    #[test]
    fn cpmg_timing() {
        assert_eq!(cpmg(2, T).unwrap().delta(), &[0.25, 0.75]);
        assert_eq!(cpmg(10, T).unwrap().delta()[0], 0.05);
        assert_eq!(cpmg(1, T).unwrap().delta(), &[0.5]);
        assert!(cpmg(0, T).is_err());
        assert!(PulseSequence::new(T, vec![0.5, 0.4]).is_err());
        assert!(PulseSequence::new(T, vec![0.0, 0.4]).is_err());
    }

    #[test]
    fn filter_two_pulse_values() {
        let s = cpmg(2, T).unwrap();
        let at_one = filter_function(&s, 1.0 / T).norm();
        assert!((at_one - 2.0 * T / (PI * TAU.sqrt())).abs() < 1e-10 * T);
        assert!(filter_function(&s, 2.0 / T).norm() < 1e-12 * T);
    }

    #[test]
    fn filter_series_joins_direct_form() {
        for n in [1, 2, 3, 7] {
            let s = cpmg(n, T).unwrap();
            let f = 0.99 * SERIES_THRESHOLD / (TAU * T);
            let series = filter_function(&s, f);
            let direct = filter_direct(&s, f);
            assert!((series - direct).norm() < 1e-9 * T, "n={n}");
            assert!(filter_function(&s, 0.0).is_finite());
        }
        // spin echo: F(0) = tau m_1 / sqrt(2 pi), m_1 = 1 - 2 * 0.5 = 0
        assert!(filter_function(&cpmg(1, T).unwrap(), 0.0).norm() < 1e-15);
    }

    #[test]
    fn filter_peak_tracks_pulse_count() {
        for n in [6usize, 10] {
            let s = cpmg(n, T).unwrap();
            let (mut fbest, mut vbest) = (0.0, 0.0);
            for i in 1..200_000 {
                let f = i as f64 * 0.01;
                let v = filter_function(&s, f).norm();
                if v > vbest {
                    vbest = v;
                    fbest = f;
                }
            }
            let nominal = n as f64 / (2.0 * T);
            assert!((fbest / nominal - 1.0).abs() < 0.02, "n={n} peak at {fbest}");
        }
    }

    #[test]
    fn response_special_values() {
        let s = cpmg(2, T).unwrap();
        let ff = filter_function(&s, 50.0);
        let a = (PI / 2.0) / (TAU.sqrt() * ff.norm());
        let noise = NoiseComponent::new(50.0, a, 0.0).unwrap();
        // noise peak: 2 pi f t0 + arg F = pi / 2
        let t0 = (PI / 2.0 - ff.arg()).rem_euclid(TAU) / (TAU * 50.0);
        assert!((cpmg_response(&noise, 1.0, t0, &s) - 1.0).abs() < 1e-12);
        let quiet = NoiseComponent::new(50.0, 0.0, 0.3).unwrap();
        assert_eq!(cpmg_response(&quiet, 0.7, 0.004, &s), 0.5);
        assert_eq!(cpmg_response(&noise, 0.0, 0.004, &s), 0.5);
    }

    #[test]
    fn field_conversion_values() {
        assert!((amplitude_to_microgauss(TAU * 104.0).unwrap() - 37.142857142857).abs() < 1e-9);
        assert!((amplitude_to_microgauss(TAU * 65.0).unwrap() - 23.3).abs() < 0.4 / 100.0 * 23.3);
        assert_eq!(amplitude_to_microgauss(0.0).unwrap(), 0.0);
        assert!(amplitude_to_microgauss(-1.0).is_err());
        let a = microgauss_to_amplitude(9.3).unwrap();
        assert!((amplitude_to_microgauss(a).unwrap() - 9.3).abs() < 1e-12);
    }

    #[test]
    fn noiseless_sense_is_exact() {
        let s = cpmg(2, T).unwrap();
        for &(a, phi, c) in &[(TAU * 30.0, 0.4, 0.9), (TAU * 104.0, -2.5, 0.8), (TAU * 5.0, 1.2, 1.0)] {
            let noise = NoiseComponent::new(50.0, a, phi).unwrap();
            let scan = simulate_scan(&[noise], c, &s, 50.0, 100, None, 0).unwrap();
            let r = sense(&scan, &s, 50.0).unwrap();
            assert!((r.amplitude / a - 1.0).abs() < 1e-6, "{r:?}");
            assert!(wrap_phase(r.phase - phi).abs() < 1e-6);
            assert!((r.contrast - c).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_scan_has_no_modulation() {
        let s = cpmg(2, T).unwrap();
        let scan = SenseScan {
            t0: (0..10).map(|i| i as f64 * 0.002).collect(),
            p_up: vec![0.5; 10],
        };
        assert!(matches!(sense(&scan, &s, 50.0), Err(Error::NoModulation)));
    }

    #[test]
    fn shot_noise_sensing_roundtrips() {
        let s = cpmg(2, T).unwrap();
        let noise = NoiseComponent::new(50.0, TAU * 104.0, 0.9).unwrap();
        let scan = simulate_scan(&[noise], 1.0, &s, 50.0, 100, Some(100), 11).unwrap();
        let r = sense(&scan, &s, 50.0).unwrap();
        assert!((r.amplitude / noise.amplitude - 1.0).abs() < 0.05, "{r:?}");

        let weak = NoiseComponent::new(50.0, TAU * 20.0, -0.4).unwrap();
        let scan = simulate_scan(&[weak], 0.25, &s, 50.0, 100, Some(100), 12).unwrap();
        let r = sense(&scan, &s, 50.0).unwrap();
        assert!((r.contrast - 0.25).abs() < 0.05, "{r:?}");
        assert!(r.amplitude_sigma > 0.0 && r.phase_sigma > 0.0 && r.contrast_sigma > 0.0);
    }

    #[test]
    fn single_component_cancels_in_one_round() {
        let noise = NoiseComponent::new(150.0, TAU * 26.0, 1.0).unwrap();
        let config = CompensationConfig {
            targets: vec![150.0],
            shots: None,
            ..CompensationConfig::default()
        };
        let report = compensate(&[noise], &config).unwrap();
        assert!(report.converged);
        assert!(report.log[0].round == 1);
        assert!(report.residual[0].amplitude < 1e-5 * noise.amplitude);
    }

    #[test]
    fn higher_harmonics_are_sensed_first() {
        let config = CompensationConfig {
            shots: None,
            max_rounds: 1,
            ..CompensationConfig::default()
        };
        let report = compensate(&reference_line_noise(), &config).unwrap();
        let order: Vec<f64> = report.log.iter().map(|e| e.frequency).collect();
        assert_eq!(order, vec![250.0, 150.0, 50.0]);
        assert_eq!(report.log.iter().map(|e| e.pulses).collect::<Vec<_>>(), vec![10, 6, 2]);
    }

    #[test]
    fn phase_drift_leaves_a_floor() {
        let config = CompensationConfig {
            shots: None,
            phase_drift: 0.05,
            seed: 3,
            ..CompensationConfig::default()
        };
        let report = compensate(&reference_line_noise(), &config).unwrap();
        assert!(report.suppression().iter().any(|s| *s > 1e-3));
    }

    #[test]
    fn ramsey_scenarios() {
        let exact = RamseyConfig {
            shots: None,
            ..RamseyConfig::default()
        };
        let quiet = ramsey_contrast(&[], &[], RamseyScenario::BothOff, &exact).unwrap();
        assert!((quiet.contrast - 1.0).abs() < 1e-12);

        let ambient = reference_line_noise();
        let report = compensate(
            &ambient,
            &CompensationConfig {
                seed: 5,
                ..CompensationConfig::default()
            },
        )
        .unwrap();
        let cfg = RamseyConfig {
            seed: 8,
            ..RamseyConfig::default()
        };
        let off = ramsey_contrast(&ambient, &report.waveform, RamseyScenario::BothOff, &cfg).unwrap();
        let comp = ramsey_contrast(&ambient, &report.waveform, RamseyScenario::CompOnly, &cfg).unwrap();
        let both = ramsey_contrast(&ambient, &report.waveform, RamseyScenario::TriggerOnCompOn, &cfg).unwrap();
        assert!(off.contrast < comp.contrast);
        let spread = 3.0 * comp.contrast_sigma.hypot(both.contrast_sigma);
        assert!((comp.contrast - both.contrast).abs() < spread, "{comp:?} {both:?}");
    }

    proptest! {
        #[test]
        fn response_is_periodic(a in 0.0f64..800.0, phi in -3.0f64..3.0, t0 in 0.0f64..0.02, n in 1usize..12) {
            let s = cpmg(n, T).unwrap();
            let noise = NoiseComponent::new(50.0, a, phi).unwrap();
            let p0 = cpmg_response(&noise, 0.8, t0, &s);
            let p1 = cpmg_response(&noise, 0.8, t0 + 1.0 / 50.0, &s);
            prop_assert!((p0 - p1).abs() < 1e-9);
        }

        #[test]
        fn suppression_rule(n in 1usize..16, k in 1usize..60) {
            let s = cpmg(n, T).unwrap();
            // suppressed unless the frequency is an odd multiple of n / (2 tau)
            let f = if n % 2 == 0 { k as f64 / T } else { (k as f64 + 0.5) / T };
            let ratio = 2.0 * f * T / n as f64;
            let odd_multiple = (ratio - ratio.round()).abs() < 1e-9 && (ratio.round() as i64) % 2 == 1;
            prop_assume!(!odd_multiple);
            prop_assert!(filter_function(&s, f).norm() < 1e-12 * T);
        }
    }
}
