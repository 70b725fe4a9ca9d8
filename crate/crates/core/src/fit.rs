//! Small least-squares toolbox: weighted straight-line regression,
//! Levenberg-Marquardt for a handful of parameters, and a bracketed
//! one-dimensional minimizer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Result of a weighted fit of `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_sigma: f64,
    pub slope_sigma: f64,
    /// Weighted residual sum of squares (chi-square when weights are 1/sigma^2).
    pub chi2: f64,
}

/// Weighted linear regression. Weights are inverse variances.
pub fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::invalid("regression", "length mismatch"));
    }
    if x.len() < 2 {
        return Err(Error::Singular("fewer than two points".into()));
    }
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        s += wi;
        sx += wi * xi;
        sy += wi * yi;
        sxx += wi * xi * xi;
        sxy += wi * xi * yi;
    }
    let det = s * sxx - sx * sx;
    if !(det.abs() > 1e-12 * (s * sxx).abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular("abscissae are degenerate".into()));
    }
    let slope = (s * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let chi2 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&xi, &yi), &wi)| wi * (yi - intercept - slope * xi).powi(2))
        .sum();
    Ok(LineFit {
        intercept,
        slope,
        intercept_sigma: (sxx / det).sqrt(),
        slope_sigma: (s / det).sqrt(),
        chi2,
    })
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Residual sum of squares at the solution.
    pub rss: f64,
    /// `(J^T J)^-1` at the solution, unscaled.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
}

/// Levenberg-Marquardt with Marquardt diagonal scaling.
///
/// `model` returns the residual vector and its Jacobian (rows = residuals,
/// columns = parameters). `project` maps a trial parameter vector back into
/// the feasible set (e.g. clamps bounds) before evaluation.
pub fn levenberg_marquardt<F, P>(mut model: F, project: P, x0: &[f64], max_iter: usize) -> LmResult
where
    F: FnMut(&[f64]) -> (DVector<f64>, DMatrix<f64>),
    P: Fn(&mut [f64]),
{
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut r, mut j) = model(&x);
    let mut rss = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * &r;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial);
            let (rt, jt_new) = model(&trial);
            let rss_t = rt.norm_squared();
            if rss_t < rss {
                let rel = (rss - rss_t) / rss.max(f64::MIN_POSITIVE);
                let step_small = step.amax() <= 1e-14 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                x = trial;
                r = rt;
                j = jt_new;
                rss = rss_t;
                lambda = (lambda * 0.3).max(1e-15);
                improved = true;
                if rel < 1e-15 || step_small {
                    return finish(x, rss, &j, iterations);
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    finish(x, rss, &j, iterations)
}

fn finish(x: Vec<f64>, rss: f64, j: &DMatrix<f64>, iterations: usize) -> LmResult {
    let covariance = (j.transpose() * j).try_inverse();
    LmResult {
        params: x,
        rss,
        covariance,
        iterations,
    }
}

/// Golden-section / parabolic (Brent) minimization of `f` on `[a, b]`.
pub fn brent_minimize<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-14;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm > x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1 * d.signum() };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_recovers_exact_data() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 - 2.0 * v).collect();
        let fit = weighted_line(&x, &y, &[1.0; 4]).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.intercept - 0.5).abs() < 1e-12);
        assert!(fit.chi2 < 1e-20);
    }

    #[test]
    fn line_rejects_degenerate_abscissa() {
        assert!(weighted_line(&[1.0, 1.0], &[0.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn lm_fits_exponential() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-1.7 * t).exp()).collect();
        let res = levenberg_marquardt(
            |p| {
                let r = DVector::from_iterator(t.len(), t.iter().zip(&y).map(|(t, y)| p[0] * (-p[1] * t).exp() - y));
                let j = DMatrix::from_fn(t.len(), 2, |i, k| {
                    let e = (-p[1] * t[i]).exp();
                    if k == 0 { e } else { -p[0] * t[i] * e }
                });
                (r, j)
            },
            |_| {},
            &[1.0, 1.0],
            200,
        );
        assert!((res.params[0] - 3.0).abs() < 1e-9);
        assert!((res.params[1] - 1.7).abs() < 1e-9);
    }

    #[test]
    fn brent_finds_parabola_minimum() {
        let (x, fx) = brent_minimize(|x| (x - 0.3).powi(2) + 1.0, -2.0, 5.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-12);
    }
}
