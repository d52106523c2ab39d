//! Quantized beamsteering codebook.
//!
//! Beams sit on a uniform grid of per-axis phase progressions
//! `2 pi j / n_axis`, which covers the direction-cosine domain of a
//! half-wavelength array once. Element `(x, y, z)` of beam `(jx, jy, jz)`
//! gets the conjugate steering phase `-(dx (x + 1) + dy (y + 1) + dz (z + 1))`
//! rounded to the nearest of `2^phase_bits` uniform levels. Measuring the
//! element positions from one spacing before the origin only adds a common
//! phase to each beam, which leaves every achievable rate unchanged.

use std::f64::consts::TAU;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ArrayGeometry;
use crate::error::{Error, Result};

/// Unit-modulus reflection vector, stored as phases in `[0, 2pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionVector {
    phases: Vec<f64>,
    entries: Vec<Complex64>,
}

impl InteractionVector {
    pub fn from_phases(phases: Vec<f64>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Config("interaction vector cannot be empty".into()));
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("interaction phases must be finite".into()));
        }
        let phases: Vec<f64> = phases.into_iter().map(|p| p.rem_euclid(TAU)).collect();
        let entries = phases.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
        Ok(InteractionVector { phases, entries })
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// `exp(j phase)` per element.
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// Effective gain `sum_m combined[m] * exp(j phase_m)`.
    pub fn apply(&self, combined: &[Complex64]) -> Result<Complex64> {
        if combined.len() != self.len() {
            return Err(Error::Dimension(format!(
                "interaction vector has {} entries, channel has {}",
                self.len(),
                combined.len()
            )));
        }
        Ok(self.gain_unchecked(combined))
    }

    pub(crate) fn gain_unchecked(&self, combined: &[Complex64]) -> Complex64 {
        self.entries
            .iter()
            .zip(combined)
            .fold(Complex64::new(0.0, 0.0), |acc, (e, h)| acc + e * h)
    }
}

/// Ordered, immutable set of candidate interaction vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    phase_bits: u32,
    vectors: Vec<InteractionVector>,
}

#[derive(Serialize, Deserialize)]
struct CodebookDoc {
    phase_bits: u32,
    vectors: Vec<Vec<f64>>,
}

impl Codebook {
    /// Builds `size` quantized steering beams for `geometry`.
    pub fn build(geometry: &ArrayGeometry, size: usize, phase_bits: u32) -> Result<Self> {
        geometry.validate()?;
        if size < 2 {
            return Err(Error::Config(format!("codebook size must be at least 2, got {size}")));
        }
        if !(1..=16).contains(&phase_bits) {
            return Err(Error::Config(format!(
                "phase resolution must be 1..=16 bits, got {phase_bits}"
            )));
        }
        let counts = split_beam_counts(geometry.dims, size);
        let levels = 1u64 << phase_bits;
        let step = TAU / levels as f64;
        let m = geometry.num_elements();

        let mut seen: Vec<Vec<u64>> = Vec::with_capacity(size);
        for beam in 0..size {
            let grid = [
                beam / (counts[1] * counts[2]),
                (beam / counts[2]) % counts[1],
                beam % counts[2],
            ];
            let progression: [f64; 3] =
                std::array::from_fn(|a| TAU * grid[a] as f64 / counts[a] as f64);
            let quantized: Vec<u64> = (0..m)
                .map(|idx| {
                    let c = geometry.coords(idx);
                    let phase: f64 = -(0..3)
                        .map(|a| progression[a] * (c[a] + 1) as f64)
                        .sum::<f64>();
                    (phase.rem_euclid(TAU) / step).round() as u64 % levels
                })
                .collect();
            if let Some(other) = seen.iter().position(|v| *v == quantized) {
                return Err(Error::DuplicateBeam {
                    requested: size,
                    reason: format!(
                        "beam {beam} equals beam {other} after {phase_bits}-bit quantization"
                    ),
                });
            }
            seen.push(quantized);
        }

        let vectors = seen
            .into_iter()
            .map(|q| InteractionVector::from_phases(q.into_iter().map(|l| l as f64 * step).collect()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Codebook {
            phase_bits,
            vectors,
        })
    }

    /// Wraps explicit vectors; they must share a length and be distinct.
    pub fn from_vectors(phase_bits: u32, vectors: Vec<InteractionVector>) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::Config("codebook needs at least one vector".into()));
        };
        let m = first.len();
        if vectors.iter().any(|v| v.len() != m) {
            return Err(Error::Dimension("codebook vectors differ in length".into()));
        }
        for (i, a) in vectors.iter().enumerate() {
            if let Some(j) = vectors[..i].iter().position(|b| b.phases == a.phases) {
                return Err(Error::DuplicateBeam {
                    requested: vectors.len(),
                    reason: format!("vector {i} repeats vector {j}"),
                });
            }
        }
        Ok(Codebook {
            phase_bits,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn phase_bits(&self) -> u32 {
        self.phase_bits
    }

    pub fn num_elements(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn get(&self, index: usize) -> Option<&InteractionVector> {
        self.vectors.get(index)
    }

    pub fn vectors(&self) -> &[InteractionVector] {
        &self.vectors
    }

    pub fn to_json(&self) -> String {
        let doc = CodebookDoc {
            phase_bits: self.phase_bits,
            vectors: self.vectors.iter().map(|v| v.phases.clone()).collect(),
        };
        serde_json::to_string(&doc).expect("codebook serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CodebookDoc = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("codebook JSON: {e}")))?;
        let vectors = doc
            .vectors
            .into_iter()
            .map(InteractionVector::from_phases)
            .collect::<Result<Vec<_>>>()?;
        Self::from_vectors(doc.phase_bits, vectors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Distributes `size` grid points over the array axes.
///
/// Only axes with more than one element receive beams, unless the array is a
/// single element. Among factorizations of `size`, the one whose per-axis
/// oversampling `n_axis / M_axis` is most balanced (in log scale) wins, with
/// ties going to the candidate that puts more beams on earlier axes.
fn split_beam_counts(dims: [usize; 3], size: usize) -> [usize; 3] {
    let usable: [bool; 3] = if dims.iter().all(|&d| d == 1) {
        [true; 3]
    } else {
        dims.map(|d| d > 1)
    };
    let divisors: Vec<usize> = (1..=size).filter(|&d| size.is_multiple_of(d)).collect();
    let mut best: Option<([usize; 3], f64)> = None;
    for &nx in divisors.iter().rev() {
        for &ny in divisors.iter().rev().filter(|&&d| (size / nx).is_multiple_of(d)) {
            let nz = size / nx / ny;
            let counts = [nx, ny, nz];
            if (0..3).any(|a| !usable[a] && counts[a] > 1) {
                continue;
            }
            let cost: f64 = (0..3)
                .filter(|&a| usable[a])
                .map(|a| ((counts[a] as f64).ln() - (dims[a] as f64).ln()).powi(2))
                .sum();
            if best.is_none_or(|(_, c)| cost < c - 1e-12) {
                best = Some((counts, cost));
            }
        }
    }
    best.map(|(c, _)| c).unwrap_or([1, 1, size])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn single_element_one_bit() {
        let g = ArrayGeometry::half_wavelength([1, 1, 1]).unwrap();
        let cb = Codebook::build(&g, 2, 1).unwrap();
        assert_eq!(cb.len(), 2);
        assert_eq!(cb.vectors()[0].phases(), &[0.0]);
        assert!((cb.vectors()[1].phases()[0] - PI).abs() < 1e-15);
        let e = cb.vectors()[1].entries()[0];
        assert!((e - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn entries_have_unit_modulus() {
        let g = ArrayGeometry::half_wavelength([1, 8, 4]).unwrap();
        let cb = Codebook::build(&g, 32, 3).unwrap();
        for v in cb.vectors() {
            for e in v.entries() {
                assert!((e.norm() - 1.0).abs() < 1e-15);
                assert!((e.norm_sqr() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oversampled_line_is_distinct() {
        let g = ArrayGeometry::half_wavelength([1, 8, 1]).unwrap();
        let cb = Codebook::build(&g, 16, 3).unwrap();
        assert_eq!(cb.len(), 16);
        for i in 0..16 {
            for j in 0..i {
                assert_ne!(cb.vectors()[i].phases(), cb.vectors()[j].phases(), "{i} vs {j}");
            }
        }
    }

    #[test]
    fn oversized_codebook_rejected() {
        let g = ArrayGeometry::half_wavelength([1, 1, 1]).unwrap();
        assert!(matches!(
            Codebook::build(&g, 3, 1),
            Err(Error::DuplicateBeam { .. })
        ));
        assert!(Codebook::build(&g, 1, 1).is_err());
        assert!(Codebook::build(&g, 2, 0).is_err());
    }

    #[test]
    fn dft_grid_is_orthogonal() {
        let g = ArrayGeometry::half_wavelength([1, 8, 4]).unwrap();
        let cb = Codebook::build(&g, 32, 3).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let ip: Complex64 = cb.vectors()[i]
                    .entries()
                    .iter()
                    .zip(cb.vectors()[j].entries())
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                let expected = if i == j { 32.0 } else { 0.0 };
                assert!((ip.norm() - expected).abs() < 1e-9, "{i},{j}: {}", ip.norm());
            }
        }
    }

    #[test]
    fn build_is_stable() {
        let g = ArrayGeometry::half_wavelength([1, 8, 4]).unwrap();
        let a = Codebook::build(&g, 32, 4).unwrap();
        let b = Codebook::build(&g, 32, 4).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(Codebook::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn split_prefers_native_grid() {
        assert_eq!(split_beam_counts([1, 8, 4], 32), [1, 8, 4]);
        assert_eq!(split_beam_counts([1, 8, 1], 16), [1, 16, 1]);
        assert_eq!(split_beam_counts([1, 1, 1], 2), [2, 1, 1]);
        assert_eq!(split_beam_counts([1, 4, 2], 8), [1, 4, 2]);
    }

    #[test]
    fn apply_examples() {
        let ones = vec![Complex64::new(1.0, 0.0); 4];
        let zero = InteractionVector::from_phases(vec![0.0; 4]).unwrap();
        let g = zero.apply(&ones).unwrap();
        assert!((g - Complex64::new(4.0, 0.0)).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h: Vec<Complex64> = (0..6)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let psi = InteractionVector::from_phases(h.iter().map(|z| -z.arg()).collect()).unwrap();
        let coherent: f64 = h.iter().map(|z| z.norm()).sum();
        let g = psi.apply(&h).unwrap();
        assert!((g.re - coherent).abs() < 1e-12 && g.im.abs() < 1e-12);

        assert!(zero.apply(&h).is_err());
    }

    #[test]
    fn hadamard_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut c = || Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let m = 9;
        let h_t: Vec<Complex64> = (0..m).map(|_| c()).collect();
        let h_r: Vec<Complex64> = (0..m).map(|_| c()).collect();
        let psi = InteractionVector::from_phases((0..m).map(|i| i as f64 * 0.77).collect()).unwrap();
        // h_r^T diag(psi) h_t, with the diagonal matrix written out
        let mut full = Complex64::new(0.0, 0.0);
        for i in 0..m {
            for j in 0..m {
                let d = if i == j { psi.entries()[i] } else { Complex64::new(0.0, 0.0) };
                full += h_r[i] * d * h_t[j];
            }
        }
        let combined: Vec<Complex64> = h_r.iter().zip(&h_t).map(|(a, b)| a * b).collect();
        assert!((full - psi.apply(&combined).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn json_shape() {
        let g = ArrayGeometry::half_wavelength([1, 1, 1]).unwrap();
        let json = Codebook::build(&g, 2, 1).unwrap().to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["phase_bits"], 1);
        assert_eq!(v["vectors"].as_array().unwrap().len(), 2);
    }
}
