//! Wideband geometric channel model for the surface array.
//!
//! Each link (transmitter to surface, surface to receiver) is a sum of `L`
//! rays. A ray contributes its gain times the array response, spread over `D`
//! delay taps through the pulse shape, and the taps are taken to the
//! frequency domain with a `K`-point DFT phase:
//!
//! ```text
//! h_k = sqrt(M / rho) * sum_d sum_l gain_l * a(az_l, el_l) * p(d * Ts - delay_l) * exp(-j 2 pi k d / K)
//! ```

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayPath {
    /// Radians in `[0, 2pi)`.
    pub azimuth: f64,
    /// Radians in `[0, 2pi)`.
    pub elevation: f64,
    pub gain: Complex64,
    /// Seconds, finite and non-negative.
    pub delay: f64,
}

impl RayPath {
    pub fn validate(&self) -> Result<()> {
        let in_circle = |a: f64| (0.0..TAU).contains(&a);
        if !in_circle(self.azimuth) || !in_circle(self.elevation) {
            return Err(Error::Config(format!(
                "ray angles must lie in [0, 2pi), got ({}, {})",
                self.azimuth, self.elevation
            )));
        }
        if !self.delay.is_finite() || self.delay < 0.0 {
            return Err(Error::Config(format!("ray delay {} is invalid", self.delay)));
        }
        Ok(())
    }
}

/// Uniform planar (or cuboid) element grid, spacing in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    /// Element counts along x, y and z.
    pub dims: [usize; 3],
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

fn default_spacing() -> f64 {
    0.5
}

impl ArrayGeometry {
    pub fn new(dims: [usize; 3], spacing: f64) -> Result<Self> {
        let geometry = ArrayGeometry { dims, spacing };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Half-wavelength spacing.
    pub fn half_wavelength(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Config(format!(
                "array dimensions must be positive, got {:?}",
                self.dims
            )));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::Config(format!(
                "element spacing must be positive, got {}",
                self.spacing
            )));
        }
        Ok(())
    }

    pub fn num_elements(&self) -> usize {
        self.dims.iter().product()
    }

    /// Grid coordinates of element `index`, row-major over (x, y, z).
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [_, my, mz] = self.dims;
        [index / (my * mz), (index / mz) % my, index % mz]
    }
}

/// Steering vector of the array toward `(azimuth, elevation)`.
///
/// Entry `(x, y, z)` is
/// `exp(j 2 pi s (x sin(az) cos(el) + y sin(az) sin(el) + z cos(az)))`,
/// ordered row-major over the grid.
pub fn array_response(geometry: &ArrayGeometry, azimuth: f64, elevation: f64) -> Vec<Complex64> {
    let (sin_a, cos_a) = azimuth.sin_cos();
    let (sin_e, cos_e) = elevation.sin_cos();
    let direction = [sin_a * cos_e, sin_a * sin_e, cos_a];
    (0..geometry.num_elements())
        .map(|m| {
            let c = geometry.coords(m);
            let path = c[0] as f64 * direction[0]
                + c[1] as f64 * direction[1]
                + c[2] as f64 * direction[2];
            Complex64::from_polar(1.0, TAU * geometry.spacing * path)
        })
        .collect()
}

/// Pulse shaping function `p(t)` for `Ts`-spaced signalling.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PulseShape {
    /// Ideal band-limited pulse `sinc(t / Ts)`.
    #[default]
    Sinc,
    /// Raised cosine with the given roll-off in `(0, 1]`.
    RaisedCosine { roll_off: f64 },
}

impl PulseShape {
    /// Evaluates the pulse at `t` seconds.
    pub fn eval(&self, t: f64, symbol_period: f64) -> f64 {
        self.eval_symbols(t / symbol_period)
    }

    /// Evaluates the pulse at `x` symbol periods.
    pub fn eval_symbols(&self, x: f64) -> f64 {
        match *self {
            PulseShape::Sinc => sinc(x),
            PulseShape::RaisedCosine { roll_off } => {
                let denom = 1.0 - (2.0 * roll_off * x).powi(2);
                if denom.abs() < 1e-12 {
                    PI / 4.0 * sinc(1.0 / (2.0 * roll_off))
                } else {
                    sinc(x) * (PI * roll_off * x).cos() / denom
                }
            }
        }
    }
}

/// Normalized sinc, exact at the integers.
fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.fract() == 0.0 {
        0.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Parameters of one link's wideband channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub num_subcarriers: usize,
    pub num_taps: usize,
    /// Seconds.
    pub symbol_period: f64,
    pub path_loss: f64,
    pub num_paths: usize,
    #[serde(default)]
    pub pulse: PulseShape,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            num_subcarriers: 16,
            num_taps: 4,
            symbol_period: 1e-8,
            path_loss: 1.0,
            num_paths: 1,
            pulse: PulseShape::Sinc,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_subcarriers == 0 || self.num_taps == 0 || self.num_paths == 0 {
            return Err(Error::Config(
                "subcarrier, tap and path counts must be positive".into(),
            ));
        }
        if !(self.symbol_period > 0.0 && self.symbol_period.is_finite()) {
            return Err(Error::Config("symbol period must be positive".into()));
        }
        if !(self.path_loss > 0.0 && self.path_loss.is_finite()) {
            return Err(Error::Config("path loss must be positive".into()));
        }
        if let PulseShape::RaisedCosine { roll_off } = self.pulse {
            if !(roll_off > 0.0 && roll_off <= 1.0) {
                return Err(Error::Config("raised-cosine roll-off must be in (0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Largest synthetic ray delay, `(D - 1) * Ts`.
    pub fn max_delay(&self) -> f64 {
        (self.num_taps.saturating_sub(1)) as f64 * self.symbol_period
    }
}

/// Draws `L` synthetic rays: uniform angles, unit-variance circularly
/// symmetric Gaussian gains, delays uniform in `[0, (D - 1) Ts]`.
pub fn generate_rays(config: &ChannelConfig, seed: u64) -> Vec<RayPath> {
    let mut rng = rng::stream(seed, 0);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let max_delay = config.max_delay();
    (0..config.num_paths)
        .map(|_| {
            let azimuth = rng.random_range(0.0..TAU);
            let elevation = rng.random_range(0.0..TAU);
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let delay = if max_delay > 0.0 {
                rng.random_range(0.0..=max_delay)
            } else {
                0.0
            };
            RayPath {
                azimuth,
                elevation,
                gain: Complex64::new(re * half, im * half),
                delay,
            }
        })
        .collect()
}

/// Per-subcarrier channel vectors of one link.
///
/// Returns `K` vectors of length `M`.
pub fn freq_channel(
    rays: &[RayPath],
    geometry: &ArrayGeometry,
    config: &ChannelConfig,
) -> Vec<Vec<Complex64>> {
    let m = geometry.num_elements();
    let k_total = config.num_subcarriers;
    let scale = (m as f64 / config.path_loss).sqrt();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); m]; k_total];

    for ray in rays {
        let steering = array_response(geometry, ray.azimuth, ray.elevation);
        let taps: Vec<f64> = (0..config.num_taps)
            .map(|d| {
                config
                    .pulse
                    .eval_symbols(d as f64 - ray.delay / config.symbol_period)
            })
            .collect();
        for (k, h_k) in out.iter_mut().enumerate() {
            let mut response = Complex64::new(0.0, 0.0);
            for (d, &p) in taps.iter().enumerate() {
                if p != 0.0 {
                    let angle = -TAU * (k * d % k_total) as f64 / k_total as f64;
                    response += Complex64::from_polar(p, angle);
                }
            }
            let weight = ray.gain * response * scale;
            for (h, a) in h_k.iter_mut().zip(&steering) {
                *h += weight * a;
            }
        }
    }
    out
}

/// Both links of one receiver position plus their element-wise product.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    h_tx: Vec<Vec<Complex64>>,
    h_rx: Vec<Vec<Complex64>>,
    h_combined: Vec<Vec<Complex64>>,
}

impl ChannelSet {
    pub fn new(h_tx: Vec<Vec<Complex64>>, h_rx: Vec<Vec<Complex64>>) -> Result<Self> {
        if h_tx.is_empty() || h_tx.len() != h_rx.len() {
            return Err(Error::Dimension(format!(
                "link subcarrier counts differ or are zero: {} vs {}",
                h_tx.len(),
                h_rx.len()
            )));
        }
        let m = h_tx[0].len();
        if m == 0 || h_tx.iter().chain(&h_rx).any(|v| v.len() != m) {
            return Err(Error::Dimension(
                "every per-subcarrier vector must share one nonzero length".into(),
            ));
        }
        let h_combined = h_tx
            .iter()
            .zip(&h_rx)
            .map(|(t, r)| t.iter().zip(r).map(|(a, b)| a * b).collect())
            .collect();
        Ok(ChannelSet {
            h_tx,
            h_rx,
            h_combined,
        })
    }

    pub fn num_subcarriers(&self) -> usize {
        self.h_tx.len()
    }

    pub fn num_elements(&self) -> usize {
        self.h_tx[0].len()
    }

    pub fn tx(&self) -> &[Vec<Complex64>] {
        &self.h_tx
    }

    pub fn rx(&self) -> &[Vec<Complex64>] {
        &self.h_rx
    }

    pub fn combined(&self) -> &[Vec<Complex64>] {
        &self.h_combined
    }
}

/// The noisy combined channel seen by the active elements.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledChannel {
    active_indices: Vec<usize>,
    samples: Vec<Vec<Complex64>>,
}

impl SampledChannel {
    pub fn new(active_indices: Vec<usize>, samples: Vec<Vec<Complex64>>) -> Result<Self> {
        if samples.iter().any(|s| s.len() != active_indices.len()) {
            return Err(Error::Dimension(format!(
                "every sample vector must have {} entries",
                active_indices.len()
            )));
        }
        if active_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("active indices must be strictly increasing".into()));
        }
        Ok(SampledChannel {
            active_indices,
            samples,
        })
    }

    pub fn active_indices(&self) -> &[usize] {
        &self.active_indices
    }

    pub fn samples(&self) -> &[Vec<Complex64>] {
        &self.samples
    }

    pub fn num_active(&self) -> usize {
        self.active_indices.len()
    }
}

/// Checks that `active` is strictly increasing and inside `[0, m)`.
pub fn validate_active(active: &[usize], m: usize) -> Result<()> {
    if active.is_empty() {
        return Err(Error::Config("at least one active element is required".into()));
    }
    if active.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("active indices must be strictly increasing".into()));
    }
    if let Some(&last) = active.last() {
        if last >= m {
            return Err(Error::Config(format!(
                "active index {last} out of range for {m} elements"
            )));
        }
    }
    Ok(())
}

/// Picks `count` distinct active elements out of `m`, sorted.
pub fn random_active_indices<R: Rng + ?Sized>(m: usize, count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if count == 0 || count > m {
        return Err(Error::Config(format!(
            "cannot choose {count} active elements out of {m}"
        )));
    }
    let mut picked = rand::seq::index::sample(rng, m, count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Noisy estimate of one link at the active elements: selected entries plus
/// independent `CN(0, noise_variance)` noise.
pub fn observe_link<R: Rng + ?Sized>(
    link: &[Vec<Complex64>],
    active: &[usize],
    noise_variance: f64,
    rng: &mut R,
) -> Vec<Vec<Complex64>> {
    let noise = (noise_variance > 0.0)
        .then(|| Normal::new(0.0, (noise_variance / 2.0).sqrt()).expect("finite std"));
    link.iter()
        .map(|h_k| {
            active
                .iter()
                .map(|&m| match &noise {
                    Some(n) => h_k[m] + Complex64::new(n.sample(rng), n.sample(rng)),
                    None => h_k[m],
                })
                .collect()
        })
        .collect()
}

/// Estimates the sampled combined channel.
///
/// Noise corrupts the transmitter-side and receiver-side samples separately
/// and the Hadamard product is formed afterwards.
pub fn sample_and_noise<R: Rng + ?Sized>(
    channels: &ChannelSet,
    active: &[usize],
    noise_variance: f64,
    rng: &mut R,
) -> Result<SampledChannel> {
    validate_active(active, channels.num_elements())?;
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::Config(format!(
            "noise variance must be non-negative, got {noise_variance}"
        )));
    }
    let tx = observe_link(channels.tx(), active, noise_variance, rng);
    let rx = observe_link(channels.rx(), active, noise_variance, rng);
    let samples = tx
        .iter()
        .zip(&rx)
        .map(|(t, r)| t.iter().zip(r).map(|(a, b)| a * b).collect())
        .collect();
    Ok(SampledChannel {
        active_indices: active.to_vec(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    /// Direct evaluation of the channel sum, one (k, d, l) term at a time.
    fn triple_loop(
        rays: &[RayPath],
        geometry: &ArrayGeometry,
        config: &ChannelConfig,
    ) -> Vec<Vec<Complex64>> {
        let m = geometry.num_elements();
        let k_total = config.num_subcarriers;
        let mut out = Vec::with_capacity(k_total);
        for k in 0..k_total {
            let mut h = vec![Complex64::new(0.0, 0.0); m];
            for d in 0..config.num_taps {
                for ray in rays {
                    let p = config
                        .pulse
                        .eval(d as f64 * config.symbol_period - ray.delay, config.symbol_period);
                    let phase = Complex64::from_polar(
                        1.0,
                        -2.0 * PI * (k as f64) * (d as f64) / k_total as f64,
                    );
                    for (idx, h_m) in h.iter_mut().enumerate() {
                        let c = geometry.coords(idx);
                        let arg = 2.0
                            * PI
                            * geometry.spacing
                            * (c[0] as f64 * ray.azimuth.sin() * ray.elevation.cos()
                                + c[1] as f64 * ray.azimuth.sin() * ray.elevation.sin()
                                + c[2] as f64 * ray.azimuth.cos());
                        let a = Complex64::new(arg.cos(), arg.sin());
                        *h_m += (m as f64 / config.path_loss).sqrt() * ray.gain * a * p * phase;
                    }
                }
            }
            out.push(h);
        }
        out
    }

    fn rel_err(a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            num += (x - y).norm_sqr();
            den += y.norm_sqr();
        }
        (num / den).sqrt()
    }

    #[test]
    fn single_element_response_is_one() {
        let g = ArrayGeometry::half_wavelength([1, 1, 1]).unwrap();
        let a = array_response(&g, 1.3, 4.2);
        assert_eq!(a, vec![Complex64::new(1.0, 0.0)]);
    }

    #[test]
    fn two_element_broadside_flip() {
        let g = ArrayGeometry::half_wavelength([1, 2, 1]).unwrap();
        let a = array_response(&g, PI / 2.0, PI / 2.0);
        assert!(close(a[0], Complex64::new(1.0, 0.0), 1e-15));
        assert!(close(a[1], Complex64::new(-1.0, 0.0), 1e-15));
    }

    #[test]
    fn table_geometry_is_unit_modulus() {
        let g = ArrayGeometry::half_wavelength([1, 40, 10]).unwrap();
        let a = array_response(&g, 0.7, 2.9);
        assert_eq!(a.len(), 400);
        assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn coords_are_row_major() {
        let g = ArrayGeometry::half_wavelength([2, 3, 4]).unwrap();
        assert_eq!(g.coords(0), [0, 0, 0]);
        assert_eq!(g.coords(1), [0, 0, 1]);
        assert_eq!(g.coords(4), [0, 1, 0]);
        assert_eq!(g.coords(12), [1, 0, 0]);
        assert_eq!(g.coords(23), [1, 2, 3]);
    }

    #[test]
    fn rays_are_deterministic_and_bounded() {
        let cfg = ChannelConfig {
            num_paths: 15,
            num_taps: 8,
            ..ChannelConfig::default()
        };
        let a = generate_rays(&cfg, 42);
        let b = generate_rays(&cfg, 42);
        assert_eq!(a, b);
        assert_eq!(a.len(), 15);
        for ray in &a {
            ray.validate().unwrap();
            assert!(ray.delay <= cfg.max_delay());
        }
        let one = ChannelConfig {
            num_paths: 1,
            ..cfg
        };
        assert_eq!(generate_rays(&one, 9), generate_rays(&one, 9));
        let three = ChannelConfig {
            num_paths: 3,
            ..cfg
        };
        assert_ne!(generate_rays(&three, 1), generate_rays(&three, 2));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ArrayGeometry::new([0, 1, 1], 0.5).is_err());
        assert!(ArrayGeometry::new([1, 1, 1], 0.0).is_err());
        let bad = ChannelConfig {
            path_loss: 0.0,
            ..ChannelConfig::default()
        };
        assert!(bad.validate().is_err());
        let ray = RayPath {
            azimuth: TAU,
            elevation: 0.0,
            gain: Complex64::new(1.0, 0.0),
            delay: 0.0,
        };
        assert!(ray.validate().is_err());
    }

    #[test]
    fn single_tap_is_flat() {
        let g = ArrayGeometry::half_wavelength([1, 4, 2]).unwrap();
        let cfg = ChannelConfig {
            num_subcarriers: 8,
            num_taps: 5,
            ..ChannelConfig::default()
        };
        let gain = Complex64::new(0.3, -1.1);
        let ray = RayPath {
            azimuth: 1.0,
            elevation: 2.0,
            gain,
            delay: 0.0,
        };
        let h = freq_channel(&[ray], &g, &cfg);
        let expected: Vec<Complex64> = array_response(&g, 1.0, 2.0)
            .into_iter()
            .map(|a| a * gain * (8.0f64).sqrt())
            .collect();
        for h_k in &h {
            for (x, y) in h_k.iter().zip(&expected) {
                assert!(close(*x, *y, 1e-12));
            }
        }
    }

    #[test]
    fn identity_channel() {
        let g = ArrayGeometry::half_wavelength([1, 1, 1]).unwrap();
        let cfg = ChannelConfig {
            num_subcarriers: 4,
            ..ChannelConfig::default()
        };
        let ray = RayPath {
            azimuth: 0.2,
            elevation: 0.1,
            gain: Complex64::new(1.0, 0.0),
            delay: 0.0,
        };
        let h = freq_channel(&[ray], &g, &cfg);
        assert!(h.iter().all(|v| v == &vec![Complex64::new(1.0, 0.0)]));
    }

    #[test]
    fn matches_triple_loop() {
        let g = ArrayGeometry::half_wavelength([1, 3, 2]).unwrap();
        let cfg = ChannelConfig {
            num_subcarriers: 8,
            num_taps: 4,
            num_paths: 2,
            path_loss: 2.5,
            ..ChannelConfig::default()
        };
        let rays = generate_rays(&cfg, 7);
        let fast = freq_channel(&rays, &g, &cfg);
        let slow = triple_loop(&rays, &g, &cfg);
        assert!(rel_err(&fast, &slow) < 1e-12);

        let rc = ChannelConfig {
            pulse: PulseShape::RaisedCosine { roll_off: 0.25 },
            ..cfg
        };
        assert!(rel_err(&freq_channel(&rays, &g, &rc), &triple_loop(&rays, &g, &rc)) < 1e-12);
    }

    #[test]
    fn gain_scaling_is_linear() {
        let g = ArrayGeometry::half_wavelength([1, 2, 2]).unwrap();
        let cfg = ChannelConfig {
            num_paths: 3,
            ..ChannelConfig::default()
        };
        let rays = generate_rays(&cfg, 3);
        let scaled: Vec<RayPath> = rays
            .iter()
            .map(|r| RayPath {
                gain: r.gain * 2.0,
                ..*r
            })
            .collect();
        let base = freq_channel(&rays, &g, &cfg);
        let twice = freq_channel(&scaled, &g, &cfg);
        for (a, b) in base.iter().flatten().zip(twice.iter().flatten()) {
            assert_eq!(*a * 2.0, *b);
        }
    }

    fn random_set(seed: u64) -> ChannelSet {
        let g = ArrayGeometry::half_wavelength([1, 4, 4]).unwrap();
        let cfg = ChannelConfig {
            num_paths: 2,
            num_subcarriers: 3,
            ..ChannelConfig::default()
        };
        ChannelSet::new(
            freq_channel(&generate_rays(&cfg, seed), &g, &cfg),
            freq_channel(&generate_rays(&cfg, seed + 100), &g, &cfg),
        )
        .unwrap()
    }

    #[test]
    fn combined_is_hadamard() {
        let set = random_set(1);
        for k in 0..set.num_subcarriers() {
            for m in 0..set.num_elements() {
                assert_eq!(set.combined()[k][m], set.tx()[k][m] * set.rx()[k][m]);
            }
        }
        assert!(ChannelSet::new(vec![vec![Complex64::new(1.0, 0.0)]], vec![]).is_err());
    }

    #[test]
    fn noiseless_sampling_selects() {
        let set = random_set(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let active = vec![1, 5, 9, 14];
        let s = sample_and_noise(&set, &active, 0.0, &mut rng).unwrap();
        for (k, sample) in s.samples().iter().enumerate() {
            assert_eq!(sample.len(), 4);
            for (j, &m) in active.iter().enumerate() {
                assert_eq!(sample[j], set.tx()[k][m] * set.rx()[k][m]);
            }
        }
        let all: Vec<usize> = (0..set.num_elements()).collect();
        let full = sample_and_noise(&set, &all, 0.0, &mut rng).unwrap();
        assert_eq!(full.samples(), set.combined());
    }

    #[test]
    fn four_of_four_hundred() {
        let g = ArrayGeometry::half_wavelength([1, 40, 10]).unwrap();
        let cfg = ChannelConfig {
            num_subcarriers: 2,
            ..ChannelConfig::default()
        };
        let set = ChannelSet::new(
            freq_channel(&generate_rays(&cfg, 1), &g, &cfg),
            freq_channel(&generate_rays(&cfg, 2), &g, &cfg),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let active = random_active_indices(400, 4, &mut rng).unwrap();
        let s = sample_and_noise(&set, &active, 0.1, &mut rng).unwrap();
        assert!(s.samples().iter().all(|v| v.len() == 4));
    }

    #[test]
    fn bad_active_indices_rejected() {
        let set = random_set(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_and_noise(&set, &[2, 1], 0.0, &mut rng).is_err());
        assert!(sample_and_noise(&set, &[16], 0.0, &mut rng).is_err());
        assert!(sample_and_noise(&set, &[0], -1.0, &mut rng).is_err());
    }

    #[test]
    fn link_noise_variance() {
        let link = vec![vec![Complex64::new(0.5, -0.25); 2]];
        let sigma2 = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut acc = [0.0f64; 2];
        for _ in 0..draws {
            let obs = observe_link(&link, &[0, 1], sigma2, &mut rng);
            for j in 0..2 {
                acc[j] += (obs[0][j] - link[0][j]).norm_sqr();
            }
        }
        for a in acc {
            let var = a / draws as f64;
            assert!((var - sigma2).abs() / sigma2 < 0.05, "variance {var}");
        }
    }
}
