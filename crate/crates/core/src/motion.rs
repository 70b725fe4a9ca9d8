//! Wavefront sensing with CPMG trains on a thermally excited axial mode.
//!
//! The semiclassical model treats the ion as a classical oscillator probed
//! by instantaneous pulses whose phases follow the ion position; averaging
//! over a Boltzmann distribution gives a closed-form excitation. The quantum
//! model evolves `|down, n>` under the full spin-motion Hamiltonian with
//! finite pulses and averages over a thermal Fock distribution.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, K_B};
use crate::error::{Error, Result};
use crate::io::Table;

type CMatrix = DMatrix<Complex64>;

/// `A`, `B` and `C^2 = A^2 + B^2` of a pulse train at `x = omega T_wait`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub c2: f64,
}

fn alt(n: usize) -> f64 {
    if n.is_multiple_of(2) { 1.0 } else { -1.0 }
}

/// Direct sums over the pulse train.
pub fn coefficients(pulses: usize, x: f64) -> Coefficients {
    let mut a = 1.0;
    let mut b = 0.0;
    for n in 1..=pulses {
        let s = 2.0 * alt(n);
        a += s * (n as f64 * x).cos();
        b += s * (n as f64 * x).sin();
    }
    let last = (pulses + 1) as f64 * x;
    a += alt(pulses + 1) * last.cos();
    b += alt(pulses + 1) * last.sin();
    Coefficients { a, b, c2: a * a + b * b }
}

/// Closed form `C^2 = 4 (sin((N+1) y) / tan y)^2` with `y = (x + pi) / 2`,
/// finite at the removable singularities `y = k pi`.
pub fn c2_closed(pulses: usize, x: f64) -> f64 {
    let y = 0.5 * (x + PI);
    // the squared ratio is pi-periodic in y, so reduce to |eps| <= pi / 2
    let eps = y - (y / PI).round() * PI;
    let m = (pulses + 1) as f64;
    let ratio = if eps.abs() < 1e-5 {
        m * (1.0 - eps * eps * (m * m / 6.0 + 1.0 / 3.0))
    } else {
        (m * eps).sin() / eps.tan()
    };
    4.0 * ratio * ratio
}

/// Inputs of the semiclassical thermal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalParams {
    /// Trap angular frequency, rad/s.
    pub omega: f64,
    /// Start-to-start pulse spacing, s.
    pub t_wait: f64,
    pub pulses: usize,
    /// Wavevector projection on the motion axis, rad/m.
    pub k_z: f64,
    /// K.
    pub temperature: f64,
    /// kg.
    pub mass: f64,
}

impl SemiclassicalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("omega", self.omega),
            ("t_wait", self.t_wait),
            ("mass", self.mass),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.pulses == 0 {
            return Err(Error::invalid("pulses", "must be at least 1"));
        }
        if !(self.k_z >= 0.0) {
            return Err(Error::invalid("k_z", "must be non-negative"));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::invalid("temperature", "must be non-negative"));
        }
        Ok(())
    }

    /// Semiclassical counterpart of a quantum setting: same trap, `k_z`
    /// from the Lamb-Dicke parameter and a temperature reproducing the
    /// thermal position variance `(hbar / 2 m omega)(2 nbar + 1)`.
    pub fn matching(q: &SpinMotionParams, pulses: usize, t_wait: f64) -> Self {
        let z0 = (HBAR / (2.0 * q.mass * q.omega)).sqrt();
        SemiclassicalParams {
            omega: q.omega,
            t_wait,
            pulses,
            k_z: q.eta / z0,
            temperature: HBAR * q.omega * (q.nbar + 0.5) / K_B,
            mass: q.mass,
        }
    }

    fn exponent_scale(&self) -> f64 {
        K_B * self.temperature * self.k_z * self.k_z / (2.0 * self.mass * self.omega * self.omega)
    }
}

/// Thermally averaged excitation after the pulse train.
pub fn thermal_excitation(p: &SemiclassicalParams) -> Result<f64> {
    p.validate()?;
    let c2 = c2_closed(p.pulses, p.omega * p.t_wait);
    Ok(0.5 * (1.0 - (-p.exponent_scale() * c2).exp()))
}

/// Excitation at the peaks `omega T_wait = (2n + 1) pi`.
pub fn peak_excitation(pulses: usize, omega: f64, k_z: f64, temperature: f64, mass: f64) -> Result<f64> {
    let p = SemiclassicalParams {
        omega,
        t_wait: PI / omega,
        pulses,
        k_z,
        temperature,
        mass,
    };
    p.validate()?;
    let m = (pulses + 1) as f64;
    Ok(0.5 * (1.0 - (-p.exponent_scale() * 4.0 * m * m).exp()))
}

/// Wavevector projection producing the peak excitation `e_max`.
pub fn infer_k_z(e_max: f64, pulses: usize, omega: f64, temperature: f64, mass: f64) -> Result<f64> {
    if e_max >= 0.5 {
        return Err(Error::Saturated { value: e_max });
    }
    if !(e_max > 0.0) {
        return Err(Error::invalid("e_max", "must be positive"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature", "must be positive"));
    }
    let m = (pulses + 1) as f64;
    let exponent = -(1.0 - 2.0 * e_max).ln();
    Ok((exponent * mass * omega * omega / (2.0 * K_B * temperature * m * m)).sqrt())
}

/// Angle between the wavefronts and the perpendicular to the chain axis
/// from a measured peak excitation, for a beam of the given wavelength.
pub fn infer_tilt(e_max: f64, pulses: usize, omega: f64, temperature: f64, mass: f64, wavelength: f64) -> Result<f64> {
    let k = TAU / wavelength;
    let kz = infer_k_z(e_max, pulses, omega, temperature, mass)?;
    if kz > k {
        return Err(Error::invalid("e_max", "requires a wavevector projection beyond |k|"));
    }
    Ok((kz / k).asin())
}

/// Tilts along the chain and the implied wavefront curvature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WavefrontGeometry {
    /// rad, one per probed ion.
    pub tilts: Vec<f64>,
    /// Distance between the first and last probed ion, m.
    pub span: f64,
    /// `span / (tilt_first - tilt_last)`, m; `None` for flat wavefronts.
    pub radius: Option<f64>,
}

/// Curvature radius from the tilts at the two ends of a span.
pub fn curvature(alpha_first: f64, alpha_last: f64, span: f64) -> Result<WavefrontGeometry> {
    if !(span > 0.0) {
        return Err(Error::invalid("span", "must be positive"));
    }
    let d = alpha_first - alpha_last;
    Ok(WavefrontGeometry {
        tilts: vec![alpha_first, alpha_last],
        span,
        radius: if d == 0.0 { None } else { Some(span / d) },
    })
}

/// Rotation `U(theta, phi)` in the basis (up, down).
pub fn rotation(theta: f64, phi: f64) -> [[Complex64; 2]; 2] {
    let c = Complex64::new((theta / 2.0).cos(), 0.0);
    let s = (theta / 2.0).sin();
    [
        [c, Complex64::new(0.0, -1.0) * Complex64::from_polar(s, -phi)],
        [Complex64::new(0.0, -1.0) * Complex64::from_polar(s, phi), c],
    ]
}

fn mul2(a: &[[Complex64; 2]; 2], b: &[[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Excitation from the explicit product of pulse rotations, given the
/// axis shifts of the first pi/2, each pi and the last pi/2 pulse.
pub fn train_excitation(phi_i: f64, phi_n: &[f64], phi_f: f64) -> f64 {
    let mut u = rotation(PI / 2.0, 1.5 * PI + phi_i);
    for (k, &p) in phi_n.iter().enumerate() {
        let theta = if k % 2 == 0 { PI } else { -PI };
        u = mul2(&rotation(theta, p), &u);
    }
    u = mul2(&rotation(PI / 2.0, PI / 2.0 + phi_f), &u);
    u[0][1].norm_sqr()
}

/// Accumulated phase of a classical trajectory `z = amplitude sin(omega t)`
/// with the first pulse at `t_i` and uniform spacing.
pub fn trajectory_phase(k_z: f64, amplitude: f64, omega: f64, t_i: f64, t_wait: f64, pulses: usize) -> f64 {
    let c = coefficients(pulses, omega * t_wait);
    k_z * amplitude * ((omega * t_i).sin() * c.a + (omega * t_i).cos() * c.b)
}

/// Pulse phases seen by a classical trajectory, `(phi_i, phi_n, phi_f)`.
pub fn trajectory_pulse_phases(k_z: f64, amplitude: f64, omega: f64, t_i: f64, t_wait: f64, pulses: usize) -> (f64, Vec<f64>, f64) {
    let at = |t: f64| k_z * amplitude * (omega * t).sin();
    let phi_n = (1..=pulses).map(|n| at(t_i + n as f64 * t_wait)).collect();
    (at(t_i), phi_n, at(t_i + (pulses + 1) as f64 * t_wait))
}

/// Semiclassical excitation curve over a list of waits.
pub fn semiclassical_scan(p: &SemiclassicalParams, t_waits: &[f64]) -> Result<Table> {
    let mut t = Table::new(["t_wait_us", "excitation"]);
    for &tw in t_waits {
        let e = thermal_excitation(&SemiclassicalParams { t_wait: tw, ..*p })?;
        t.push(vec![tw * 1e6, e]);
    }
    Ok(t)
}

/// Inputs of the quantum spin-motion model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinMotionParams {
    /// Lamb-Dicke parameter along the motion axis.
    pub eta: f64,
    /// Rabi frequency, rad/s.
    pub rabi: f64,
    /// Laser detuning from the qubit transition, rad/s.
    pub detuning: f64,
    /// Trap angular frequency, rad/s.
    pub omega: f64,
    pub nbar: f64,
    pub fock_cutoff: usize,
    /// Ion mass, kg (only used to relate to the semiclassical model).
    pub mass: f64,
    /// Thermal Fock states are kept until this much weight is left out.
    pub thermal_tolerance: f64,
    /// Largest population allowed at the Fock cutoff.
    pub leak_limit: f64,
}

impl SpinMotionParams {
    pub fn new(eta: f64, rabi: f64, omega: f64, nbar: f64, fock_cutoff: usize) -> Self {
        SpinMotionParams {
            eta,
            rabi,
            detuning: 0.0,
            omega,
            nbar,
            fock_cutoff,
            mass: crate::constants::CA40_MASS,
            thermal_tolerance: 1e-4,
            leak_limit: 1e-6,
        }
    }

    /// Smallest cutoff accepted for a mean phonon number.
    pub fn minimum_cutoff(nbar: f64) -> usize {
        (5.0 * nbar).ceil() as usize + 20
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta", "must be non-negative"));
        }
        for (name, v) in [("rabi", self.rabi), ("omega", self.omega), ("mass", self.mass)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if !(self.nbar >= 0.0) {
            return Err(Error::invalid("nbar", "must be non-negative"));
        }
        if !self.detuning.is_finite() {
            return Err(Error::invalid("detuning", "must be finite"));
        }
        let min = Self::minimum_cutoff(self.nbar);
        if self.fock_cutoff < min {
            return Err(Error::invalid("fock_cutoff", format!("must be at least {min} for nbar = {}", self.nbar)));
        }
        if !(self.thermal_tolerance > 0.0 && self.thermal_tolerance < 1.0) {
            return Err(Error::invalid("thermal_tolerance", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn pi_time(&self) -> f64 {
        PI / self.rabi
    }

    pub fn trap_period(&self) -> f64 {
        TAU / self.omega
    }
}

/// Placement of the pulses for a given `T_wait` (start-to-start spacing of
/// consecutive pi pulses).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpmgTiming {
    /// Every pulse, including both pi/2 pulses, starts `T_wait` after the previous one.
    Uniform,
    /// Half waits between the pi/2 pulses and the outer pi pulses.
    Cpmg,
}

/// `<m| exp(i eta (a + a^dagger)) |n>`.
pub fn displacement_element(eta: f64, m: usize, n: usize) -> Complex64 {
    let (lo, k) = if m >= n { (n, m - n) } else { (m, n - m) };
    if k > 0 && eta == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let x = eta * eta;
    // normalized generalized Laguerre polynomial L_lo^(k)(x) / C(lo + k, lo)
    let kf = k as f64;
    let (mut prev, mut cur) = (1.0, (1.0 + kf - x) / (1.0 + kf));
    if lo == 0 {
        cur = 1.0;
    } else {
        for j in 1..lo {
            let jf = j as f64;
            let next = ((2.0 * jf + 1.0 + kf - x) * cur - jf * prev) / (jf + 1.0 + kf);
            prev = cur;
            cur = next;
        }
    }
    // eta^k sqrt((lo + k)! / lo!) / k!
    let mut log_mag = -0.5 * x;
    if k > 0 {
        log_mag += kf * eta.ln();
        for i in 1..=k {
            log_mag += 0.5 * ((lo + i) as f64).ln() - (i as f64).ln();
        }
    }
    let phase = match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    };
    phase * (log_mag.exp() * cur)
}

/// Propagators of one Fock window `[lo, hi]`, basis `(up, m)` then `(down, m)`.
struct Window {
    lo: usize,
    hi: usize,
    half_in: CMatrix,
    half_out: CMatrix,
    pi_even: CMatrix,
    pi_odd: CMatrix,
}

impl Window {
    fn size(&self) -> usize {
        self.hi - self.lo + 1
    }

    fn build(p: &SpinMotionParams, lo: usize, hi: usize) -> Window {
        let d = hi - lo + 1;
        let mut h = CMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            let e = p.omega * (i + lo) as f64;
            h[(i, i)] = Complex64::new(e - 0.5 * p.detuning, 0.0);
            h[(d + i, d + i)] = Complex64::new(e + 0.5 * p.detuning, 0.0);
        }
        for i in 0..d {
            for j in 0..d {
                let v = displacement_element(p.eta, i + lo, j + lo) * (0.5 * p.rabi);
                h[(i, d + j)] = v;
                h[(d + j, i)] = v.conj();
            }
        }
        let eig = SymmetricEigen::new(h);
        let propagator = |t: f64| -> CMatrix {
            let v = &eig.eigenvectors;
            let mut scaled = v.clone();
            for (c, l) in eig.eigenvalues.iter().enumerate() {
                let f = Complex64::from_polar(1.0, -l * t);
                for r in 0..scaled.nrows() {
                    scaled[(r, c)] *= f;
                }
            }
            &scaled * v.adjoint()
        };
        let half = propagator(p.pi_time() / 2.0);
        let pi = propagator(p.pi_time());
        Window {
            lo,
            hi,
            half_in: rephase(&half, d, 1.5 * PI),
            half_out: rephase(&half, d, 0.5 * PI),
            pi_even: rephase(&pi, d, PI),
            pi_odd: pi,
        }
    }
}

/// `R U R^dagger` with `R = diag(exp(-i phi / 2) on up, exp(i phi / 2) on down)`.
fn rephase(u: &CMatrix, d: usize, phi: f64) -> CMatrix {
    let mut out = u.clone();
    let down = Complex64::from_polar(1.0, phi);
    let up = Complex64::from_polar(1.0, -phi);
    for r in 0..2 * d {
        for c in 0..2 * d {
            match (r < d, c < d) {
                (true, false) => out[(r, c)] *= up,
                (false, true) => out[(r, c)] *= down,
                _ => {}
            }
        }
    }
    out
}

fn free_evolution(psi: &mut DVector<Complex64>, p: &SpinMotionParams, lo: usize, d: usize, t: f64) {
    if t == 0.0 {
        return;
    }
    for i in 0..d {
        let e = p.omega * (i + lo) as f64;
        psi[i] *= Complex64::from_polar(1.0, -(e - 0.5 * p.detuning) * t);
        psi[d + i] *= Complex64::from_polar(1.0, -(e + 0.5 * p.detuning) * t);
    }
}

/// Excitation and edge populations for one initial Fock state.
struct FockRun {
    excitation: Vec<f64>,
    /// Largest population found next to a window edge that is not a hard boundary.
    window_edge: f64,
    /// Largest population found next to the Fock cutoff.
    cutoff_edge: f64,
    norm_error: f64,
}

const EDGE: usize = 2;
/// Thermal initial states stay this many levels below the cutoff.
const CUTOFF_GUARD: usize = 20;

fn run_window(
    p: &SpinMotionParams,
    w: &Window,
    n: usize,
    pulses: usize,
    timing: CpmgTiming,
    t_waits: &[f64],
) -> FockRun {
    let d = w.size();
    let tp = p.pi_time();
    let mut out = FockRun {
        excitation: Vec::with_capacity(t_waits.len()),
        window_edge: 0.0,
        cutoff_edge: 0.0,
        norm_error: 0.0,
    };
    for &tw in t_waits {
        let (first, middle, last) = match timing {
            CpmgTiming::Uniform => (tw - tp / 2.0, tw - tp, tw - tp),
            CpmgTiming::Cpmg => (tw / 2.0 - tp / 2.0, tw - tp, tw / 2.0 - tp),
        };
        let mut psi = DVector::from_element(2 * d, Complex64::new(0.0, 0.0));
        psi[d + n - w.lo] = Complex64::new(1.0, 0.0);
        psi = &w.half_in * psi;
        free_evolution(&mut psi, p, w.lo, d, first);
        for k in 1..=pulses {
            let u = if k % 2 == 1 { &w.pi_odd } else { &w.pi_even };
            psi = u * psi;
            free_evolution(&mut psi, p, w.lo, d, if k == pulses { last } else { middle });
        }
        psi = &w.half_out * psi;
        let pop = |i: usize| psi[i].norm_sqr() + psi[d + i].norm_sqr();
        let up: f64 = (0..d).map(|i| psi[i].norm_sqr()).sum();
        let total: f64 = (0..d).map(pop).sum();
        out.norm_error = out.norm_error.max((total - 1.0).abs());
        out.excitation.push(up);
        let edge_band = EDGE.min(d);
        let low: f64 = (0..edge_band).map(pop).sum();
        let high: f64 = (d - edge_band..d).map(pop).sum();
        if w.lo > 0 {
            out.window_edge = out.window_edge.max(low);
        }
        if w.hi < p.fock_cutoff {
            out.window_edge = out.window_edge.max(high);
        } else {
            out.cutoff_edge = out.cutoff_edge.max(high);
        }
    }
    out
}

fn fock_run(p: &SpinMotionParams, n: usize, pulses: usize, timing: CpmgTiming, t_waits: &[f64]) -> Result<FockRun> {
    let mut half_width = 12usize;
    loop {
        let lo = n.saturating_sub(half_width);
        let hi = (n + half_width).min(p.fock_cutoff);
        let w = Window::build(p, lo, hi);
        let run = run_window(p, &w, n, pulses, timing, t_waits);
        let whole = lo == 0 && hi == p.fock_cutoff;
        if run.window_edge <= 1e-12 || whole {
            if run.cutoff_edge > p.leak_limit {
                return Err(Error::CutoffLeak {
                    leak: run.cutoff_edge,
                    limit: p.leak_limit,
                    cutoff: p.fock_cutoff,
                });
            }
            return Ok(run);
        }
        half_width *= 2;
    }
}

fn check_timing(p: &SpinMotionParams, timing: CpmgTiming, t_waits: &[f64]) -> Result<()> {
    let shortest = match timing {
        CpmgTiming::Uniform => p.pi_time(),
        CpmgTiming::Cpmg => 2.0 * p.pi_time(),
    };
    if let Some(tw) = t_waits.iter().find(|&&t| !(t >= shortest * (1.0 - 1e-12))) {
        return Err(Error::invalid("t_wait", format!("{tw} s leaves no room for the pulses (minimum {shortest} s)")));
    }
    Ok(())
}

/// Excitation after the train for the single initial state `|down, n>`.
pub fn fock_cpmg_scan(p: &SpinMotionParams, n: usize, pulses: usize, timing: CpmgTiming, t_waits: &[f64]) -> Result<Vec<f64>> {
    p.validate()?;
    if pulses == 0 {
        return Err(Error::invalid("pulses", "must be at least 1"));
    }
    if n > p.fock_cutoff {
        return Err(Error::invalid("n", "initial Fock state beyond the cutoff"));
    }
    check_timing(p, timing, t_waits)?;
    Ok(fock_run(p, n, pulses, timing, t_waits)?.excitation)
}

/// Thermally averaged quantum excitation curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantumScan {
    pub params: SpinMotionParams,
    pub pulses: usize,
    pub timing: CpmgTiming,
    pub t_wait: Vec<f64>,
    pub excitation: Vec<f64>,
    /// Thermal weight of the simulated Fock states before renormalization.
    pub retained_weight: f64,
    pub fock_states: usize,
    /// Largest population found next to the Fock cutoff.
    pub leak: f64,
    /// Largest deviation of the final norm from one.
    pub norm_error: f64,
}

impl QuantumScan {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["t_wait_us", "excitation"]);
        for (a, b) in self.t_wait.iter().zip(&self.excitation) {
            t.push(vec![a * 1e6, *b]);
        }
        t
    }
}

/// Thermal Fock weights `nbar^n / (nbar + 1)^(n + 1)` up to the tolerance
/// or `n = n_max`, whichever comes first. Returns the weights and their sum.
pub fn thermal_weights(nbar: f64, tolerance: f64, n_max: usize) -> (Vec<f64>, f64) {
    let ratio = nbar / (nbar + 1.0);
    let mut weights = Vec::new();
    let mut w = 1.0 / (nbar + 1.0);
    let mut sum = 0.0;
    for _ in 0..=n_max {
        weights.push(w);
        sum += w;
        if sum >= 1.0 - tolerance {
            break;
        }
        w *= ratio;
    }
    (weights, sum)
}

/// Evolve each thermally populated `|down, n>` through the train and average.
pub fn quantum_cpmg_scan(p: &SpinMotionParams, pulses: usize, timing: CpmgTiming, t_waits: &[f64]) -> Result<QuantumScan> {
    p.validate()?;
    if pulses == 0 {
        return Err(Error::invalid("pulses", "must be at least 1"));
    }
    check_timing(p, timing, t_waits)?;
    let (weights, retained) = thermal_weights(p.nbar, p.thermal_tolerance, p.fock_cutoff.saturating_sub(CUTOFF_GUARD));
    let mut excitation = vec![0.0; t_waits.len()];
    let mut leak = 0.0f64;
    let mut norm_error = 0.0f64;
    for (n, w) in weights.iter().enumerate() {
        let run = fock_run(p, n, pulses, timing, t_waits)?;
        for (acc, e) in excitation.iter_mut().zip(&run.excitation) {
            *acc += w * e;
        }
        leak = leak.max(run.cutoff_edge);
        norm_error = norm_error.max(run.norm_error);
    }
    for e in excitation.iter_mut() {
        *e /= retained;
    }
    Ok(QuantumScan {
        params: *p,
        pulses,
        timing,
        t_wait: t_waits.to_vec(),
        excitation,
        retained_weight: retained,
        fock_states: weights.len(),
        leak,
        norm_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{CA40_MASS, QUBIT_WAVELENGTH};
    use proptest::prelude::*;

    #[test]
    fn closed_form_matches_sums() {
        for pulses in [1, 2, 5, 10, 20] {
            for i in 0..1000 {
                let x = -7.0 + 21.0 * i as f64 / 999.0;
                let direct = coefficients(pulses, x).c2;
                let closed = c2_closed(pulses, x);
                assert!((direct - closed).abs() < 1e-9 * (1.0 + direct), "N={pulses} x={x}");
            }
            let peak = c2_closed(pulses, PI);
            assert!((peak - 4.0 * ((pulses + 1) * (pulses + 1)) as f64).abs() < 1e-9);
            assert!((coefficients(pulses, PI).c2 - peak).abs() < 1e-9);
            assert!(coefficients(pulses, TAU).c2 < 1e-20);
            assert!(c2_closed(pulses, TAU) < 1e-20);
        }
    }

    #[test]
    fn unitary_train_matches_phase_form() {
        use rand::Rng;
        let mut rng = crate::rng::stream(17, 0);
        for _ in 0..100 {
            let pulses = rng.random_range(1..25);
            let kz = rng.random_range(0.0..2e6);
            let a = rng.random_range(0.0..3e-7);
            let omega = TAU * 1e5;
            let ti = rng.random_range(0.0..1e-5);
            let tw = rng.random_range(1e-7..2e-5);
            let (pi, pn, pf) = trajectory_pulse_phases(kz, a, omega, ti, tw, pulses);
            let phi = trajectory_phase(kz, a, omega, ti, tw, pulses);
            let e = train_excitation(pi, &pn, pf);
            assert!((e - 0.5 * (1.0 - phi.cos())).abs() < 1e-9);
        }
    }

    fn reference() -> SemiclassicalParams {
        let k = TAU / QUBIT_WAVELENGTH;
        SemiclassicalParams {
            omega: TAU * 112e3,
            t_wait: PI / (TAU * 112e3),
            pulses: 20,
            k_z: k * 4.8e-3f64.sin(),
            temperature: 4.6e-3,
            mass: CA40_MASS,
        }
    }

    #[test]
    fn reference_peak_excitation() {
        let p = reference();
        let e = thermal_excitation(&p).unwrap();
        let peak = peak_excitation(p.pulses, p.omega, p.k_z, p.temperature, p.mass).unwrap();
        assert!((e - peak).abs() < 1e-12);
        // exponent 2 kB T kz^2 (N+1)^2 / (m w^2) evaluated independently
        assert!((e - 0.472_888_904_188_8).abs() < 1e-9, "{e}");
    }

    #[test]
    fn trivial_limits() {
        let p = reference();
        assert_eq!(thermal_excitation(&SemiclassicalParams { temperature: 0.0, ..p }).unwrap(), 0.0);
        assert_eq!(thermal_excitation(&SemiclassicalParams { k_z: 0.0, ..p }).unwrap(), 0.0);
        assert!(thermal_excitation(&SemiclassicalParams { mass: 0.0, ..p }).is_err());
    }

    #[test]
    fn tilt_roundtrip_and_curvature() {
        let p = reference();
        let e = thermal_excitation(&p).unwrap();
        let alpha = infer_tilt(e, p.pulses, p.omega, p.temperature, p.mass, QUBIT_WAVELENGTH).unwrap();
        assert!((alpha - 4.8e-3).abs() < 1e-9);
        assert!(matches!(infer_tilt(0.5, 20, p.omega, p.temperature, p.mass, QUBIT_WAVELENGTH), Err(Error::Saturated { .. })));
        let g = curvature(4.8e-3, 1.4e-3, 269e-6).unwrap();
        assert!((g.radius.unwrap() - 0.0791176).abs() < 1e-6);
        assert_eq!(curvature(1e-3, 1e-3, 269e-6).unwrap().radius, None);
    }

    #[test]
    fn displacement_matches_exponential() {
        // compare against a Taylor series of exp(i eta (a + a^dagger)) in a large space
        let eta = 0.3;
        let dim = 60;
        let mut x = CMatrix::zeros(dim, dim);
        for n in 0..dim - 1 {
            let v = Complex64::new(0.0, eta * ((n + 1) as f64).sqrt());
            x[(n, n + 1)] = v;
            x[(n + 1, n)] = v;
        }
        let mut sum = CMatrix::identity(dim, dim);
        let mut term = CMatrix::identity(dim, dim);
        for k in 1..60 {
            term = &term * &x / Complex64::new(k as f64, 0.0);
            sum += &term;
        }
        for m in 0..20 {
            for n in 0..20 {
                assert!((displacement_element(eta, m, n) - sum[(m, n)]).norm() < 1e-12, "{m} {n}");
            }
        }
        // unitarity of a row deep in the ladder
        let row: f64 = (0..2000).map(|m| displacement_element(0.05, m, 900).norm_sqr()).sum();
        assert!((row - 1.0).abs() < 1e-10, "{row}");
        // frozen from 40-digit evaluations of the Laguerre form
        // (i^k times the real Laguerre form: i^0 = 1, i^10 = -1)
        let deep: [(usize, f64); 2] = [(900, -0.260_334_273_924_711_9), (910, -1.331_096_472_170_636e-5)];
        for (m, v) in deep {
            let z = displacement_element(0.05, m, 900);
            assert!((z.re - v).abs() < 1e-10 * v.abs() && z.im == 0.0, "{m} {z}");
        }
    }

    #[test]
    fn zero_eta_echo_closes() {
        let p = SpinMotionParams::new(0.0, TAU * 50.0, TAU, 2.0, 40);
        let tw: Vec<f64> = (1..40).map(|i| 0.05 * i as f64).collect();
        for timing in [CpmgTiming::Uniform, CpmgTiming::Cpmg] {
            let t: Vec<f64> = tw.iter().copied().filter(|&t| t >= 2.0 * p.pi_time()).collect();
            let scan = quantum_cpmg_scan(&p, 10, timing, &t).unwrap();
            assert!(scan.excitation.iter().all(|e| *e < 1e-10));
            assert!(scan.norm_error < 1e-8);
        }
        let odd = quantum_cpmg_scan(&p, 3, CpmgTiming::Uniform, &tw).unwrap();
        assert!(odd.excitation.iter().all(|e| *e < 1e-10));
    }

    #[test]
    fn fast_pulses_reproduce_single_trajectory_limit() {
        // a Fock state is not a classical trajectory, but for strong drive the
        // peak position must sit at odd multiples of half the trap period
        let p = SpinMotionParams::new(0.01, TAU * 50.0, TAU, 0.0, 20);
        let t: Vec<f64> = (0..=40).map(|i| 0.3 + 0.4 * i as f64 / 40.0).collect();
        let e = fock_cpmg_scan(&p, 10, 10, CpmgTiming::Uniform, &t).unwrap();
        let best = e.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((t[best] - 0.5).abs() <= 0.02, "{}", t[best]);
    }

    #[test]
    fn thermal_weights_and_cutoff_rules() {
        let (w, s) = thermal_weights(100.0, 1e-4, 5000);
        assert!(s >= 1.0 - 1e-4 && w.len() > 900);
        let (w, s) = thermal_weights(100.0, 1e-4, 700);
        assert_eq!(w.len(), 701);
        assert!(s < 1.0 - 1e-4);
        let mut p = SpinMotionParams::new(0.01, 1.0, 1.0, 10.0, 69);
        assert!(p.validate().is_err());
        p.fock_cutoff = 70;
        assert!(p.validate().is_ok());
    }

    #[test]
    fn leak_at_cutoff_is_reported() {
        let p = SpinMotionParams::new(0.5, TAU * 5.0, TAU, 0.0, 20);
        let t = [0.5, 1.5];
        let err = fock_cpmg_scan(&p, 20, 20, CpmgTiming::Uniform, &t).unwrap_err();
        assert!(matches!(err, Error::CutoffLeak { .. }), "{err}");
    }

    #[test]
    fn timing_must_fit_pulses() {
        let p = SpinMotionParams::new(0.01, TAU, TAU, 0.0, 20);
        assert!(fock_cpmg_scan(&p, 0, 4, CpmgTiming::Uniform, &[0.2]).is_err());
        assert!(fock_cpmg_scan(&p, 0, 4, CpmgTiming::Cpmg, &[0.6]).is_err());
        assert!(fock_cpmg_scan(&p, 0, 4, CpmgTiming::Uniform, &[0.6]).is_ok());
    }

    proptest! {
        #[test]
        fn excitation_periodic_in_wait(tw in 1e-7f64..2e-5, pulses in 1usize..30) {
            let p = SemiclassicalParams { t_wait: tw, pulses, ..reference() };
            let period = TAU / p.omega;
            let e0 = thermal_excitation(&p).unwrap();
            let e1 = thermal_excitation(&SemiclassicalParams { t_wait: tw + period, ..p }).unwrap();
            prop_assert!((e0 - e1).abs() < 1e-9);
        }

        #[test]
        fn excitation_monotone(t in 1e-4f64..1e-2, scale in 1.0f64..2.0, pulses in 1usize..25) {
            let p = SemiclassicalParams { temperature: t, pulses, k_z: 2e5, ..reference() };
            let e = thermal_excitation(&p).unwrap();
            let hotter = thermal_excitation(&SemiclassicalParams { temperature: t * scale, ..p }).unwrap();
            let steeper = thermal_excitation(&SemiclassicalParams { k_z: p.k_z * scale, ..p }).unwrap();
            let longer = thermal_excitation(&SemiclassicalParams { pulses: pulses + 1, ..p }).unwrap();
            prop_assert!(hotter >= e && steeper >= e && longer >= e);
        }
    }
}
