//! Heating-rate scaling fits, crystal survival Monte-Carlo, and phase-noise
//! correlation analysis.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{brent_minimize, weighted_line};
use crate::io::Table;
use crate::rng;

/// One heating-rate measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatingPoint {
    /// Axial trap angular frequency, rad/s.
    pub omega: f64,
    pub ion_count: usize,
    /// Quanta per second.
    pub rate: f64,
    pub sigma: f64,
}

/// `(dn/dt) / N = prefactor * omega^(-exponent)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatingFit {
    pub prefactor: f64,
    pub exponent: f64,
    pub exponent_sigma: f64,
    pub chi2: f64,
}

/// Weighted log-log regression of the per-ion heating rate against frequency.
pub fn fit_heating(data: &[HeatingPoint]) -> Result<HeatingFit> {
    for p in data {
        if !(p.rate > 0.0 && p.sigma > 0.0 && p.omega > 0.0) || p.ion_count == 0 {
            return Err(Error::invalid("heating", "rates, uncertainties and frequencies must be positive"));
        }
    }
    let mut freqs: Vec<f64> = data.iter().map(|p| p.omega).collect();
    freqs.sort_by(f64::total_cmp);
    freqs.dedup();
    if freqs.len() < 3 {
        return Err(Error::invalid("heating", "at least three distinct frequencies"));
    }
    let x: Vec<f64> = data.iter().map(|p| p.omega.ln()).collect();
    let y: Vec<f64> = data.iter().map(|p| (p.rate / p.ion_count as f64).ln()).collect();
    let w: Vec<f64> = data.iter().map(|p| (p.rate / p.sigma).powi(2)).collect();
    let line = weighted_line(&x, &y, &w)?;
    Ok(HeatingFit {
        prefactor: line.intercept.exp(),
        exponent: -line.slope,
        exponent_sigma: line.slope_sigma,
        chi2: line.chi2,
    })
}

/// Synthetic heating data following a power law with proportional scatter.
pub fn synthetic_heating(
    omegas: &[f64],
    ion_counts: &[usize],
    prefactor: f64,
    exponent: f64,
    relative_noise: f64,
    seed: u64,
) -> Vec<HeatingPoint> {
    let mut out = Vec::new();
    let mut index = 0;
    for &n in ion_counts {
        for &w in omegas {
            let mut stream = rng::stream(seed, index);
            index += 1;
            let truth = n as f64 * prefactor * w.powf(-exponent);
            let z: f64 = stream.sample(StandardNormal);
            out.push(HeatingPoint {
                omega: w,
                ion_count: n,
                rate: truth * (1.0 + relative_noise * z).max(1e-3),
                sigma: if relative_noise > 0.0 { truth * relative_noise } else { truth },
            });
        }
    }
    out
}

/// Rates of the processes that end or spoil an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionModel {
    /// Crystal melting, 1/s.
    pub melt_rate: f64,
    /// Collisions during a probe, 1/ms.
    pub soft_collision_rate: f64,
    /// Ions turning dark, 1/day.
    pub dark_ion_rate: f64,
}

impl CollisionModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("melt_rate", self.melt_rate),
            ("soft_collision_rate", self.soft_collision_rate),
            ("dark_ion_rate", self.dark_ion_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be non-negative"));
            }
        }
        Ok(())
    }

    /// Probability that at least one collision hits a probe of `probe_ms` milliseconds.
    pub fn spoil_probability(&self, probe_ms: f64) -> f64 {
        -(-self.soft_collision_rate * probe_ms).exp_m1()
    }

    /// Expected number of ions turning dark within `seconds`.
    pub fn expected_dark_ions(&self, seconds: f64) -> f64 {
        self.dark_ion_rate * seconds / 86_400.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub time: Vec<f64>,
    pub survival: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl SurvivalCurve {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["time_s", "survival"]);
        for (a, b) in self.time.iter().zip(&self.survival) {
            t.push(vec![*a, *b]);
        }
        t
    }
}

/// Fraction of `trials` crystals still intact at `points` evenly spaced
/// times up to `horizon` seconds.
pub fn simulate_survival(model: &CollisionModel, horizon: f64, points: usize, trials: usize, seed: u64) -> Result<SurvivalCurve> {
    model.validate()?;
    if trials < 100 {
        return Err(Error::invalid("trials", "at least 100"));
    }
    if !(horizon > 0.0) || points < 2 {
        return Err(Error::invalid("horizon", "positive horizon and at least two points"));
    }
    let mut melt: Vec<f64> = (0..trials)
        .map(|i| {
            if model.melt_rate == 0.0 {
                return f64::INFINITY;
            }
            let exp = Exp::new(model.melt_rate).expect("positive rate");
            exp.sample(&mut rng::stream(seed, i as u64))
        })
        .collect();
    melt.sort_by(f64::total_cmp);
    let time: Vec<f64> = (0..points).map(|k| horizon * k as f64 / (points - 1) as f64).collect();
    let survival = time
        .iter()
        .map(|&t| {
            let melted = melt.partition_point(|&m| m <= t);
            (trials - melted) as f64 / trials as f64
        })
        .collect();
    Ok(SurvivalCurve {
        time,
        survival,
        trials,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LifetimeFit {
    /// s; `None` when no decay is seen.
    pub tau: Option<f64>,
    pub tau_sigma: f64,
}

/// Fit `S(t) = exp(-t / tau)` by weighted regression of `ln S` through the
/// origin. Points with zero survivors are skipped.
pub fn fit_lifetime(curve: &SurvivalCurve) -> Result<LifetimeFit> {
    let n = curve.trials as f64;
    let (mut stt, mut sty) = (0.0, 0.0);
    for (&t, &s) in curve.time.iter().zip(&curve.survival) {
        if t <= 0.0 || s <= 0.0 {
            continue;
        }
        // var(ln S) ~ (1 - S) / (n S); floor keeps early points from dominating
        let var = ((1.0 - s) / (n * s)).max(1.0 / (n * n));
        let w = 1.0 / var;
        stt += w * t * t;
        sty += w * t * s.ln();
    }
    if stt == 0.0 {
        return Err(Error::invalid("survival", "no usable points"));
    }
    let slope = sty / stt;
    if slope >= 0.0 {
        return Ok(LifetimeFit {
            tau: None,
            tau_sigma: 0.0,
        });
    }
    let slope_sigma = (1.0 / stt).sqrt();
    let tau = -1.0 / slope;
    Ok(LifetimeFit {
        tau: Some(tau),
        tau_sigma: tau * tau * slope_sigma,
    })
}

/// Generators of the relative phase between two interferometer arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseNoise {
    /// Phase random walk (white frequency noise) with diffusion constant in rad^2/s.
    RandomWalk { diffusion: f64 },
    /// Frequency wandering as an Ornstein-Uhlenbeck process: rms in rad/s
    /// and correlation time in s. Slow compared with the lags studied.
    SlowDrift { rms: f64, correlation_time: f64 },
    /// Independent Gaussian phase (rad rms) in every experiment.
    WhiteFrequency { rms: f64 },
}

/// Phase differences of `n` successive experiments spaced by `dt` seconds.
pub fn simulate_phase_noise(kind: PhaseNoise, dt: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || n == 0 {
        return Err(Error::invalid("dt", "positive spacing and at least one experiment"));
    }
    let mut stream = rng::stream(seed, 0);
    let mut gauss = || -> f64 { stream.sample(StandardNormal) };
    let mut out = Vec::with_capacity(n);
    match kind {
        PhaseNoise::RandomWalk { diffusion } => {
            if !(diffusion >= 0.0) {
                return Err(Error::invalid("diffusion", "must be non-negative"));
            }
            let step = (diffusion * dt).sqrt();
            let mut phi = 0.0;
            for _ in 0..n {
                out.push(phi);
                phi += step * gauss();
            }
        }
        PhaseNoise::SlowDrift { rms, correlation_time } => {
            if !(rms >= 0.0 && correlation_time > 0.0) {
                return Err(Error::invalid("slow_drift", "rms >= 0 and correlation time > 0"));
            }
            let a = (-dt / correlation_time).exp();
            let kick = rms * (1.0 - a * a).sqrt();
            let mut freq = rms * gauss();
            let mut phi = 0.0;
            for _ in 0..n {
                out.push(phi);
                phi += freq * dt;
                freq = a * freq + kick * gauss();
            }
        }
        PhaseNoise::WhiteFrequency { rms } => {
            if !(rms >= 0.0) {
                return Err(Error::invalid("rms", "must be non-negative"));
            }
            for _ in 0..n {
                out.push(rms * gauss());
            }
        }
    }
    Ok(out)
}

/// `C(lag) = <cos(phi_{i + lag} - phi_i)>` over all available pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationSeries {
    pub lag: Vec<f64>,
    pub value: Vec<f64>,
    pub pairs: Vec<usize>,
}

impl CorrelationSeries {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["lag_s", "correlation", "pairs"]);
        for ((a, b), c) in self.lag.iter().zip(&self.value).zip(&self.pairs) {
            t.push(vec![*a, *b, *c as f64]);
        }
        t
    }
}

/// Correlations at lags `0, 1, ..., max_lag` experiments.
pub fn correlations(phases: &[f64], dt: f64, max_lag: usize) -> Result<CorrelationSeries> {
    if max_lag + 1 < 10 {
        return Err(Error::invalid("max_lag", "at least 10 lags"));
    }
    if phases.len() <= max_lag {
        return Err(Error::invalid("phases", "series shorter than the largest lag"));
    }
    let mut cs = CorrelationSeries {
        lag: Vec::new(),
        value: Vec::new(),
        pairs: Vec::new(),
    };
    for k in 0..=max_lag {
        let pairs = phases.len() - k;
        let sum: f64 = (0..pairs).map(|i| (phases[i + k] - phases[i]).cos()).sum();
        cs.lag.push(k as f64 * dt);
        cs.value.push(if k == 0 { 1.0 } else { sum / pairs as f64 });
        cs.pairs.push(pairs);
    }
    Ok(cs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayShape {
    Exponential,
    Gaussian,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub amplitude: f64,
    /// 1/e time, s.
    pub scale: f64,
    pub rss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelSelection {
    pub shape: DecayShape,
    pub exponential: Option<DecayFit>,
    pub gaussian: Option<DecayFit>,
}

impl ModelSelection {
    /// Scale of the selected model.
    pub fn scale(&self) -> Option<f64> {
        match self.shape {
            DecayShape::Exponential => self.exponential.map(|f| f.scale),
            DecayShape::Gaussian => self.gaussian.map(|f| f.scale),
            DecayShape::Flat => None,
        }
    }
}

/// Least-squares fit of `amplitude * g(lag / scale)` with the amplitude profiled out.
fn fit_decay(cs: &CorrelationSeries, shape: fn(f64) -> f64) -> DecayFit {
    let profile = |scale: f64| -> (f64, f64) {
        let (mut gy, mut gg) = (0.0, 0.0);
        for (l, c) in cs.lag.iter().zip(&cs.value) {
            let g = shape(l / scale);
            gy += g * c;
            gg += g * g;
        }
        let a = if gg > 0.0 { gy / gg } else { 0.0 };
        let rss = cs
            .lag
            .iter()
            .zip(&cs.value)
            .map(|(l, c)| (c - a * shape(l / scale)).powi(2))
            .sum();
        (a, rss)
    };
    let max_lag = cs.lag.last().copied().unwrap_or(1.0);
    let step = cs.lag.get(1).copied().unwrap_or(max_lag);
    // search log(scale) between a tenth of a lag step and a hundred spans
    let (lo, hi) = ((0.1 * step).ln(), (100.0 * max_lag).ln());
    let grid = 200;
    let mut best = (f64::INFINITY, lo);
    for i in 0..=grid {
        let s = lo + (hi - lo) * i as f64 / grid as f64;
        let r = profile(s.exp()).1;
        if r < best.0 {
            best = (r, s);
        }
    }
    let width = (hi - lo) / grid as f64;
    let (s, _) = brent_minimize(|s| profile(s.exp()).1, best.1 - width, best.1 + width, 1e-10);
    let scale = s.exp();
    let (amplitude, rss) = profile(scale);
    DecayFit { amplitude, scale, rss }
}

/// Compare an exponential and a Gaussian decay by residual sum of squares.
/// Series that stay within `flat_tolerance` of their zero-lag value are "flat".
pub fn model_select(cs: &CorrelationSeries) -> Result<ModelSelection> {
    model_select_with(cs, 0.02)
}

pub fn model_select_with(cs: &CorrelationSeries, flat_tolerance: f64) -> Result<ModelSelection> {
    if cs.lag.len() < 10 {
        return Err(Error::invalid("correlations", "at least 10 lags"));
    }
    let lowest = cs.value.iter().cloned().fold(f64::INFINITY, f64::min);
    if 1.0 - lowest < flat_tolerance {
        return Ok(ModelSelection {
            shape: DecayShape::Flat,
            exponential: None,
            gaussian: None,
        });
    }
    let e = fit_decay(cs, |x| (-x).exp());
    let g = fit_decay(cs, |x| (-x * x).exp());
    Ok(ModelSelection {
        shape: if g.rss < e.rss { DecayShape::Gaussian } else { DecayShape::Exponential },
        exponential: Some(e),
        gaussian: Some(g),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn omegas() -> Vec<f64> {
        [60e3, 80e3, 100e3, 130e3, 160e3, 200e3].iter().map(|f| TAU * f).collect()
    }

    #[test]
    fn exact_power_law() {
        let data = synthetic_heating(&omegas(), &[1, 51], 3e12, 2.0, 0.0, 0);
        let fit = fit_heating(&data).unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-12);
        assert!((fit.prefactor / 3e12 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn heating_requires_three_frequencies() {
        let data = synthetic_heating(&omegas()[..2], &[1, 2, 3], 1.0, 2.0, 0.1, 0);
        assert!(fit_heating(&data).is_err());
    }

    #[test]
    fn ion_count_normalization() {
        let w = [TAU * 100e3; 3];
        let data: Vec<HeatingPoint> = synthetic_heating(&w, &[10, 40], 2e12, 1.9, 0.05, 4);
        let per_ion: Vec<f64> = data.iter().map(|p| p.rate / p.ion_count as f64).collect();
        let mean = per_ion.iter().sum::<f64>() / per_ion.len() as f64;
        assert!(per_ion.iter().all(|r| (r / mean - 1.0).abs() < 0.2));
    }

    #[test]
    fn spoil_probability_value() {
        let m = CollisionModel {
            melt_rate: 0.0,
            soft_collision_rate: 7e-5,
            dark_ion_rate: 0.0,
        };
        assert!((m.spoil_probability(10.0) - 7e-4).abs() < 1e-6);
    }

    #[test]
    fn no_melting_means_no_decay() {
        let m = CollisionModel {
            melt_rate: 0.0,
            soft_collision_rate: 0.0,
            dark_ion_rate: 0.0,
        };
        let c = simulate_survival(&m, 100.0, 20, 500, 1).unwrap();
        assert!(c.survival.iter().all(|s| *s == 1.0));
        assert_eq!(fit_lifetime(&c).unwrap().tau, None);
    }

    #[test]
    fn survival_is_seed_deterministic() {
        let m = CollisionModel {
            melt_rate: 1.0 / 29.2,
            soft_collision_rate: 0.0,
            dark_ion_rate: 0.0,
        };
        let a = simulate_survival(&m, 60.0, 31, 1000, 3).unwrap();
        let b = simulate_survival(&m, 60.0, 31, 1000, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.survival.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn random_walk_matches_closed_form() {
        let d = 2.0;
        let dt = 0.01;
        let phases = simulate_phase_noise(PhaseNoise::RandomWalk { diffusion: d }, dt, 10_000, 5).unwrap();
        let cs = correlations(&phases, dt, 40).unwrap();
        for (k, (&lag, &c)) in cs.lag.iter().zip(&cs.value).enumerate() {
            let expected = (-d * lag / 2.0).exp();
            // pairs overlap, so the effective sample count is far below the pair count
            let independent = (10_000.0 / (k.max(1) as f64)).max(1.0);
            let sigma = ((1.0 - expected * expected) / (2.0 * independent)).sqrt();
            assert!((c - expected).abs() < 3.0 * sigma + 1e-12, "lag {lag}: {c} vs {expected}");
        }
    }

    #[test]
    fn quiet_series_is_flat() {
        for kind in [
            PhaseNoise::RandomWalk { diffusion: 0.0 },
            PhaseNoise::SlowDrift {
                rms: 0.0,
                correlation_time: 1.0,
            },
        ] {
            let phases = simulate_phase_noise(kind, 0.01, 1000, 0).unwrap();
            let cs = correlations(&phases, 0.01, 20).unwrap();
            assert!(cs.value.iter().all(|c| *c == 1.0));
            assert_eq!(model_select(&cs).unwrap().shape, DecayShape::Flat);
        }
    }

    #[test]
    fn too_few_lags() {
        assert!(correlations(&[0.0; 100], 0.01, 5).is_err());
    }

    #[test]
    fn shapes_are_told_apart() {
        let dt = 0.01;
        let rw = simulate_phase_noise(PhaseNoise::RandomWalk { diffusion: 2.0 / 0.3 }, dt, 100_000, 1).unwrap();
        let sel = model_select(&correlations(&rw, dt, 60).unwrap()).unwrap();
        assert_eq!(sel.shape, DecayShape::Exponential);
        assert!((sel.scale().unwrap() / 0.3 - 1.0).abs() < 0.1, "{sel:?}");

        let drift = PhaseNoise::SlowDrift {
            rms: 2f64.sqrt() / 0.3,
            correlation_time: 2.0,
        };
        let sd = simulate_phase_noise(drift, dt, 10_000, 1).unwrap();
        let sel = model_select(&correlations(&sd, dt, 60).unwrap()).unwrap();
        assert_eq!(sel.shape, DecayShape::Gaussian);
    }

    proptest! {
        #[test]
        fn heating_scale_equivariance(s in 0.01f64..100.0, seed in 0u64..50) {
            let data = synthetic_heating(&omegas(), &[1, 7], 1e12, 1.9, 0.1, seed);
            let scaled: Vec<HeatingPoint> = data.iter().map(|p| HeatingPoint { rate: p.rate * s, sigma: p.sigma * s, ..*p }).collect();
            let a = fit_heating(&data).unwrap();
            let b = fit_heating(&scaled).unwrap();
            prop_assert!((a.exponent - b.exponent).abs() < 1e-9);
            prop_assert!((b.prefactor / a.prefactor / s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn correlation_bounds(seed in 0u64..1000, d in 0.0f64..50.0) {
            let phases = simulate_phase_noise(PhaseNoise::RandomWalk { diffusion: d }, 0.01, 300, seed).unwrap();
            let cs = correlations(&phases, 0.01, 30).unwrap();
            prop_assert_eq!(cs.value[0], 1.0);
            prop_assert!(cs.value.iter().all(|c| c.abs() <= 1.0));
        }
    }
}
