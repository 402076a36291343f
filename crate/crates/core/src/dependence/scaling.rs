//! Monte-Carlo check of how remote-AoA inference error scales with array size.
//!
//! A user with a pure LoS channel is observed by one or two known sites. Each
//! known site takes one noisy snapshot and estimates the AoA by maximum
//! likelihood. With two sites the user is triangulated; with one site the
//! range comes from the received amplitude through the known pathloss law.
//! The AoA at a remote site then follows geometrically. Angle errors shrink as
//! `M^{-3/2}` and amplitude errors as `M^{-1/2}`, so the remote-AoA MSE falls
//! as `M^{-3}` with two sites and `M^{-1}` with one.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::features::padded_dft;
use crate::scene::{steering_from_sine, wrap_angle, Point, Region};
use crate::seed::{rng_for, streams};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("{discarded} of {trials} trials discarded for near-parallel bearings at M = {m}")]
    Geometry { m: usize, discarded: usize, trials: usize },
    #[error("invalid scaling configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizationMode {
    /// AoA at two known sites, triangulated.
    TwoSites,
    /// AoA plus amplitude ranging at one known site.
    OneSite,
}

/// Known-site and remote-site layout for the scaling experiment.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    /// Positions and boresight angles of the known sites (first one is used
    /// in one-site mode).
    pub known_sites: Vec<(Point, f64)>,
    pub remote_site: (Point, f64),
    pub user_region: Region,
    pub wavelength: f64,
    pub pathloss_exponent: f64,
    /// Minimum `|sin|` of the angle between the two bearings before a
    /// triangulation is discarded.
    pub min_bearing_separation: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            known_sites: vec![
                (Point::new(0.0, 0.0), PI / 2.0),
                (Point::new(400.0, 0.0), PI / 2.0),
            ],
            remote_site: (Point::new(200.0, 450.0), -PI / 2.0),
            user_region: Region::Rect {
                x: [120.0, 280.0],
                y: [150.0, 250.0],
            },
            wavelength: 0.1,
            pathloss_exponent: 2.0,
            min_bearing_separation: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub mode: LocalizationMode,
    pub m_values: Vec<usize>,
    /// Remote-AoA mean-square errors in rad².
    pub mse_values: Vec<f64>,
    pub discarded: Vec<usize>,
    pub trials: usize,
    pub fitted_slope: f64,
}

const COARSE_GRID: usize = 1024;
const GOLDEN_TOL: f64 = 1e-6;

fn beam_power(y: &[Complex64], spacing: f64, sine: f64) -> f64 {
    let a = steering_from_sine(y.len(), spacing, sine);
    a.iter().zip(y).map(|(a, y)| a.conj() * y).sum::<Complex64>().norm_sqr()
}

/// Maximum-likelihood AoA (boresight-relative, radians) of a single plane wave
/// with unknown complex gain: `argmax_θ |a(θ)^H y|^2`, found on a 1024-point
/// grid uniform in `sin θ` and refined by golden-section search.
pub fn estimate_aoa_ml(y: &[Complex64], spacing: f64) -> f64 {
    let m = y.len();
    // coarse grid u_k = -1 + 2k/G
    let coarse: Vec<f64> = if (spacing - 0.5).abs() < 1e-15 && m <= COARSE_GRID {
        // with half-wavelength spacing the grid is a zero-padded DFT of (-1)^n y_n
        let alt: Vec<Complex64> = y
            .iter()
            .enumerate()
            .map(|(n, v)| if n % 2 == 0 { *v } else { -*v })
            .collect();
        let spec = padded_dft(&alt, COARSE_GRID);
        // Σ y_n e^{-jπ n u_k} = Σ (-1)^n y_n e^{-j2π n k / G}
        spec.iter().map(|v| v.norm_sqr()).collect()
    } else {
        (0..COARSE_GRID)
            .map(|k| beam_power(y, spacing, -1.0 + 2.0 * k as f64 / COARSE_GRID as f64))
            .collect()
    };
    let best = coarse
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc })
        .0;
    let step = 2.0 / COARSE_GRID as f64;
    let center = -1.0 + step * best as f64;
    let (mut lo, mut hi) = ((center - step).max(-1.0), (center + step).min(1.0));
    let gr = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - gr * (hi - lo);
    let mut d = lo + gr * (hi - lo);
    let mut fc = beam_power(y, spacing, c);
    let mut fd = beam_power(y, spacing, d);
    // sin-space tolerance well below the 1e-6 rad angle target
    while hi - lo > GOLDEN_TOL * 0.1 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - gr * (hi - lo);
            fc = beam_power(y, spacing, c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + gr * (hi - lo);
            fd = beam_power(y, spacing, d);
        }
    }
    (0.5 * (lo + hi)).clamp(-1.0, 1.0).asin()
}

struct Snapshot {
    y: Vec<Complex64>,
}

fn snapshot<R: Rng>(
    rng: &mut R,
    m: usize,
    rel_angle: f64,
    gain: Complex64,
    noise_std: f64,
) -> Snapshot {
    let a = steering_from_sine(m, 0.5, rel_angle.sin());
    let s = noise_std / 2f64.sqrt();
    let y = a
        .into_iter()
        .map(|an| {
            let nre: f64 = StandardNormal.sample(rng);
            let nim: f64 = StandardNormal.sample(rng);
            gain * an + Complex64::new(s * nre, s * nim)
        })
        .collect();
    Snapshot { y }
}

fn intersect(p1: &Point, a1: f64, p2: &Point, a2: f64, min_sep: f64) -> Option<Point> {
    let (d1x, d1y) = (a1.cos(), a1.sin());
    let (d2x, d2y) = (a2.cos(), a2.sin());
    let det = d1x * (-d2y) - d1y * (-d2x);
    if det.abs() < min_sep {
        return None;
    }
    let (bx, by) = (p2.x - p1.x, p2.y - p1.y);
    let t1 = (bx * (-d2y) - by * (-d2x)) / det;
    let t2 = (d1x * by - d1y * bx) / det;
    if t1 <= 0.0 || t2 <= 0.0 {
        return None;
    }
    Some(p1.offset(t1 * d1x, t1 * d1y))
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Runs the remote-AoA Monte-Carlo sweep. `snr_db` is the per-antenna SNR;
/// `f64::INFINITY` gives noiseless snapshots. Trial `i` uses the same user
/// position and noise stream for every array size.
pub fn remote_aoa_scaling(
    config: &ScalingConfig,
    mode: LocalizationMode,
    m_values: &[usize],
    snr_db: f64,
    trials: usize,
    seed: u64,
) -> Result<ScalingReport, ScalingError> {
    let needed = match mode {
        LocalizationMode::TwoSites => 2,
        LocalizationMode::OneSite => 1,
    };
    if config.known_sites.len() < needed {
        return Err(ScalingError::Config(format!("{needed} known sites required")));
    }
    if m_values.is_empty() || m_values.windows(2).any(|w| w[0] >= w[1]) || m_values[0] == 0 {
        return Err(ScalingError::Config("array sizes must be positive and strictly increasing".into()));
    }
    if trials == 0 {
        return Err(ScalingError::Config("at least one trial required".into()));
    }
    config.user_region.validate().map_err(|e| ScalingError::Config(e.to_string()))?;
    let snr = 10f64.powf(snr_db / 10.0);
    let (remote_pos, remote_orient) = config.remote_site;
    let lambda = config.wavelength;
    let expo = config.pathloss_exponent;
    let amp_of = |d: f64| (lambda / (4.0 * PI * d)).powf(expo / 2.0);
    let dist_of = |amp: f64| lambda / (4.0 * PI) * amp.powf(-2.0 / expo);

    let mut mse_values = Vec::with_capacity(m_values.len());
    let mut discarded = Vec::with_capacity(m_values.len());
    for &m in m_values {
        let mut sq_errors = Vec::with_capacity(trials);
        let mut dropped = 0;
        for t in 0..trials {
            let mut rng = rng_for(seed, streams::SCALING, t as u64);
            let user = config.user_region.sample(&mut rng);
            let mut bearings = Vec::with_capacity(needed);
            let mut ranged = None;
            for &(pos, orient) in config.known_sites.iter().take(needed) {
                let global = pos.bearing_to(&user);
                let rel = wrap_angle(global - orient);
                let d = pos.distance(&user);
                let amp = amp_of(d);
                let gain = Complex64::from_polar(amp, rng.random_range(-PI..PI));
                let noise_std = if snr.is_finite() { amp / snr.sqrt() } else { 0.0 };
                let snap = snapshot(&mut rng, m, rel, gain, noise_std);
                let rel_hat = estimate_aoa_ml(&snap.y, 0.5);
                bearings.push((pos, orient + rel_hat));
                if mode == LocalizationMode::OneSite {
                    let a = steering_from_sine(m, 0.5, rel_hat.sin());
                    let g_hat: Complex64 =
                        a.iter().zip(&snap.y).map(|(a, y)| a.conj() * y).sum::<Complex64>() / m as f64;
                    ranged = Some(dist_of(g_hat.norm()));
                }
            }
            let estimate = match mode {
                LocalizationMode::TwoSites => intersect(
                    &bearings[0].0,
                    bearings[0].1,
                    &bearings[1].0,
                    bearings[1].1,
                    config.min_bearing_separation,
                ),
                LocalizationMode::OneSite => {
                    let (p, b) = bearings[0];
                    ranged.map(|r| p.offset(r * b.cos(), r * b.sin()))
                }
            };
            let Some(est) = estimate else {
                dropped += 1;
                continue;
            };
            let truth = remote_pos.bearing_to(&user) - remote_orient;
            let inferred = remote_pos.bearing_to(&est) - remote_orient;
            let err = wrap_angle(inferred - truth);
            sq_errors.push(err * err);
        }
        if dropped * 10 > trials {
            return Err(ScalingError::Geometry { m, discarded: dropped, trials });
        }
        // summed in trial order after collection
        mse_values.push(sq_errors.iter().sum::<f64>() / sq_errors.len() as f64);
        discarded.push(dropped);
    }
    let xs: Vec<f64> = m_values.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = mse_values.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let fitted_slope = if m_values.len() >= 2 { least_squares_slope(&xs, &ys) } else { f64::NAN };
    Ok(ScalingReport {
        mode,
        m_values: m_values.to_vec(),
        mse_values,
        discarded,
        trials,
        fitted_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_ml_aoa_recovers_noiseless_angle() {
        for m in [8, 33, 128] {
            for &theta in &[-1.2, -0.3, 0.0, 0.41, 1.3] {
                let y = steering_from_sine(m, 0.5, f64::sin(theta));
                let est = estimate_aoa_ml(&y, 0.5);
                assert!((est - theta).abs() < 1e-6, "m={m} theta={theta} est={est}");
            }
        }
    }

    #[test]
    fn test_ml_aoa_generic_spacing_path() {
        let y = steering_from_sine(16, 0.4, 0.3);
        let est = estimate_aoa_ml(&y, 0.4);
        assert!((est.sin() - 0.3).abs() < 1e-6);
    }

    #[test]
    fn test_zero_noise_gives_zero_mse() {
        let cfg = ScalingConfig::default();
        for mode in [LocalizationMode::TwoSites, LocalizationMode::OneSite] {
            let r = remote_aoa_scaling(&cfg, mode, &[8, 32], f64::INFINITY, 50, 1).unwrap();
            for mse in &r.mse_values {
                assert!(*mse < 1e-10, "{mode:?} {mse}");
            }
        }
    }

    #[test]
    fn test_parallel_bearings_are_discarded() {
        let mut cfg = ScalingConfig::default();
        // both known sites on one line through the user region
        cfg.known_sites = vec![(Point::new(200.0, 0.0), PI / 2.0), (Point::new(200.0, -100.0), PI / 2.0)];
        cfg.user_region = Region::Rect { x: [199.9, 200.1], y: [150.0, 250.0] };
        assert!(matches!(
            remote_aoa_scaling(&cfg, LocalizationMode::TwoSites, &[8], f64::INFINITY, 50, 1),
            Err(ScalingError::Geometry { .. })
        ));
    }

    #[test]
    fn test_slope_fit_exact_power_law() {
        let xs: Vec<f64> = [8.0f64, 16.0, 32.0].iter().map(|v| v.ln()).collect();
        let ys: Vec<f64> = [8.0f64, 16.0, 32.0].iter().map(|v| (5.0 * v.powi(-3)).ln()).collect();
        assert!((least_squares_slope(&xs, &ys) + 3.0).abs() < 1e-12);
    }

    #[test]
    fn test_config_errors() {
        let cfg = ScalingConfig::default();
        assert!(remote_aoa_scaling(&cfg, LocalizationMode::TwoSites, &[16, 8], 10.0, 10, 1).is_err());
        assert!(remote_aoa_scaling(&cfg, LocalizationMode::TwoSites, &[8], 10.0, 0, 1).is_err());
    }
}
