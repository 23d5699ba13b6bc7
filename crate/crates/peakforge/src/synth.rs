//! Seeded synthetic-data generators for the three application archetypes:
//! dive-style depth series, accumulated parametric pulse waves, and
//! spectrum-style signals with diverse peak widths.
//!
//! All randomness flows from one explicit seed through SplitMix64
//! (Steele, Lea and Flood's 64-bit mix generator), with normal deviates
//! from the Box-Muller transform, so replicates are reproducible from the
//! seed alone in any implementation of the same generator.

use crate::deconv::{wave_eval, WaveParams};
use crate::io::SignalRecord;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SynthError {
    #[error("parameters do not fit the requested signal length: {0}")]
    Infeasible(String),
}

/// SplitMix64: `state += 0x9E3779B97F4A7C15`, output mixed with two
/// xor-shift-multiply rounds.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via the Box-Muller transform.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(1e-300);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn range_usize(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_f64() * (hi - lo) as f64) as usize
    }
}

/// Ground truth for one synthetic dive.
#[derive(Debug, Clone, PartialEq)]
pub struct DiveTruth {
    pub start: usize,
    pub end: usize,
    pub max_depth: f64,
    pub bottom_time: f64,
}

#[derive(Debug, Clone)]
pub struct DiveParams {
    pub samples: usize,
    pub dives: usize,
    pub noise_sd: f64,
    pub depth_range: (f64, f64),
}

impl Default for DiveParams {
    fn default() -> Self {
        Self {
            samples: 600,
            dives: 5,
            noise_sd: 0.15,
            depth_range: (8.0, 30.0),
        }
    }
}

/// Depth series with non-overlapping unimodal excursions above a noisy
/// surface baseline; depth is stored positive-down so each dive peaks at
/// its deepest point.
pub fn generate_dive(params: &DiveParams, seed: u64) -> Result<(SignalRecord, Vec<DiveTruth>), SynthError> {
    let n = params.samples;
    let k = params.dives;
    let mut rng = SplitMix64::new(seed);

    // Budget: each dive needs room plus a surface gap on both sides.
    let min_dive = 24usize;
    let gap = 8usize;
    if k > 0 && k * (min_dive + gap) + gap > n {
        return Err(SynthError::Infeasible(format!(
            "{k} dives of at least {min_dive} samples do not fit into {n}"
        )));
    }

    let mut y = vec![0.0_f64; n];
    let mut truths = Vec::with_capacity(k);
    if k > 0 {
        let slot = n / k;
        for d in 0..k {
            let slot_lo = d * slot;
            let len = min_dive + rng.range_usize(0, (slot - gap - min_dive).max(1));
            let start = slot_lo + rng.range_usize(0, (slot - len - gap).max(1)) + gap / 2;
            let depth = rng.uniform(params.depth_range.0, params.depth_range.1);
            // Unimodal profile: sin^p rises and falls once; p varies the
            // bottom flatness between dives.
            let p = rng.uniform(1.0, 3.0);
            let mut max_i = start;
            for i in 0..len {
                let u = (i as f64 + 0.5) / len as f64;
                let v = depth * (std::f64::consts::PI * u).sin().powf(p);
                y[start + i] += v;
                if y[start + i] > y[max_i] {
                    max_i = start + i;
                }
            }
            truths.push(DiveTruth {
                start,
                end: start + len,
                max_depth: y[max_i],
                bottom_time: max_i as f64,
            });
        }
    }
    for v in &mut y {
        *v += params.noise_sd * rng.normal();
        // A recorder never reports the animal above the surface.
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let x: Vec<f64> = (0..n).map(|i| i as f64 * 5.0).collect(); // 5 s sampling
    let record = SignalRecord::new(x, y, vec![("source".into(), "synthetic-dive".into())])
        .expect("generated grid is strictly increasing");
    Ok((record, truths))
}

/// Ground truth for one synthetic pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTruth {
    pub arrival: usize,
    pub height: f64,
}

#[derive(Debug, Clone)]
pub struct PulseParams {
    pub samples: usize,
    pub pulses: usize,
    pub wave: WaveParams,
    pub min_separation: usize,
    pub height_range: (f64, f64),
    /// Noise standard deviation relative to the tallest accumulated value.
    pub noise_rel: f64,
}

impl Default for PulseParams {
    fn default() -> Self {
        Self {
            samples: 300,
            pulses: 7,
            wave: WaveParams::new(17.41, 4.745, 31.81).expect("positive parameters"),
            min_separation: 20,
            height_range: (0.7, 1.5),
            noise_rel: 0.02,
        }
    }
}

/// Accumulated parametric waves at randomly spaced arrival times plus
/// Gaussian noise.
pub fn generate_pulses(
    params: &PulseParams,
    seed: u64,
) -> Result<(SignalRecord, Vec<PulseTruth>), SynthError> {
    let n = params.samples;
    let k = params.pulses;
    let mut rng = SplitMix64::new(seed);
    let margin = 10usize;
    let usable = n.saturating_sub(2 * margin);
    if k > 0 && k * params.min_separation > usable {
        return Err(SynthError::Infeasible(format!(
            "{k} pulses with separation {} do not fit into {n} samples",
            params.min_separation
        )));
    }

    // Arrival times: a random split of the usable range into gaps of at
    // least the minimum separation.
    let mut arrivals = Vec::with_capacity(k);
    if k > 0 {
        let slack = usable - k * params.min_separation;
        let mut cuts: Vec<f64> = (0..k).map(|_| rng.next_f64()).collect();
        cuts.sort_by(f64::total_cmp);
        let mut pos = margin;
        for (i, c) in cuts.iter().enumerate() {
            pos += (c * slack as f64 / k as f64) as usize;
            arrivals.push(pos);
            pos += params.min_separation;
            let _ = i;
        }
    }

    let mut truths = Vec::with_capacity(k);
    let mut y = vec![0.0_f64; n];
    for &arrival in &arrivals {
        let height = rng.uniform(params.height_range.0, params.height_range.1);
        for (t, v) in y.iter_mut().enumerate().skip(arrival) {
            *v += height * wave_eval((t - arrival) as f64, &params.wave);
        }
        truths.push(PulseTruth { arrival, height });
    }
    let amplitude = y.iter().cloned().fold(0.0_f64, f64::max).max(1e-12);
    for v in &mut y {
        *v += params.noise_rel * amplitude * rng.normal();
    }
    let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let record = SignalRecord::new(x, y, vec![("source".into(), "synthetic-pulses".into())])
        .expect("generated grid is strictly increasing");
    Ok((record, truths))
}

/// Ground truth for one spectrum bump.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpTruth {
    pub center: f64,
    pub width: f64,
    pub height: f64,
    /// The analyte-independent bump present in every spectrum.
    pub reaction_ion: bool,
}

#[derive(Debug, Clone)]
pub struct SpectrumParams {
    pub samples: usize,
    /// Analyte bumps in addition to the fixed reaction-ion-like bump.
    pub bumps: usize,
    pub noise_sd: f64,
    pub width_range: (f64, f64),
    pub height_range: (f64, f64),
}

impl Default for SpectrumParams {
    fn default() -> Self {
        Self {
            samples: 1200,
            bumps: 3,
            noise_sd: 0.004,
            width_range: (0.012, 0.045),
            height_range: (0.3, 1.0),
        }
    }
}

/// Spectrum-style signal on the inverse-reduced-mobility axis `[0, 1.4]`:
/// a near-zero baseline, a fixed early bump at 0.5, and analyte bumps of
/// diverse widths to its right. The stretch before 0.45 stays peak-free so
/// a noise window can be taken there.
pub fn generate_spectrum(
    params: &SpectrumParams,
    seed: u64,
) -> Result<(SignalRecord, Vec<BumpTruth>), SynthError> {
    let n = params.samples;
    let mut rng = SplitMix64::new(seed);
    let (a, b) = (0.0_f64, 1.4_f64);
    let x: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();

    let mut truths = vec![BumpTruth {
        center: 0.5,
        width: 0.02,
        height: 0.9,
        reaction_ion: true,
    }];
    // Analyte bumps sit right of the reaction ion peak with spacing drawn
    // from the remaining room.
    let lo = 0.62;
    let hi = 1.3;
    if params.bumps > 0 {
        let spacing = (hi - lo) / params.bumps as f64;
        if spacing < 2.5 * params.width_range.1 {
            return Err(SynthError::Infeasible(format!(
                "{} bumps of width up to {} do not fit into [{lo}, {hi}]",
                params.bumps, params.width_range.1
            )));
        }
        for j in 0..params.bumps {
            let center = lo + spacing * (j as f64 + rng.uniform(0.25, 0.75));
            truths.push(BumpTruth {
                center,
                width: rng.uniform(params.width_range.0, params.width_range.1),
                height: rng.uniform(params.height_range.0, params.height_range.1),
                reaction_ion: false,
            });
        }
    }

    let mut y = vec![0.0_f64; n];
    for truth in &truths {
        for (i, v) in y.iter_mut().enumerate() {
            let z = (x[i] - truth.center) / truth.width;
            *v += truth.height * (-0.5 * z * z).exp();
        }
    }
    for v in &mut y {
        *v += params.noise_sd * rng.normal();
    }
    let record = SignalRecord::new(x, y, vec![("source".into(), "synthetic-spectrum".into())])
        .expect("generated grid is strictly increasing");
    Ok((record, truths))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_is_deterministic_and_uniformish() {
        let mut a = SplitMix64::new(12345);
        let mut b = SplitMix64::new(12345);
        let mut sum = 0.0;
        for _ in 0..1000 {
            let v = a.next_f64();
            assert_eq!(v, b.next_f64());
            assert!((0.0..1.0).contains(&v));
            sum += v;
        }
        assert!((sum / 1000.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn pulse_count_matches_request() {
        let params = PulseParams::default();
        let (record, truth) = generate_pulses(&params, 7).unwrap();
        assert_eq!(truth.len(), 7);
        assert_eq!(record.len(), 300);
        for pair in truth.windows(2) {
            assert!(pair[1].arrival - pair[0].arrival >= params.min_separation);
        }
    }

    #[test]
    fn zero_dives_is_flat_noise() {
        let params = DiveParams {
            dives: 0,
            ..DiveParams::default()
        };
        let (record, truth) = generate_dive(&params, 3).unwrap();
        assert!(truth.is_empty());
        let max = record.y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(max < 1.0, "flat baseline should stay below 1 m, got {max}");
    }

    #[test]
    fn dive_count_matches_request() {
        let (record, truth) = generate_dive(&DiveParams::default(), 11).unwrap();
        assert_eq!(truth.len(), 5);
        for t in &truth {
            assert!(t.max_depth >= 7.0, "dive depth {}", t.max_depth);
            assert!(t.start < t.end && t.end <= record.len());
        }
    }

    #[test]
    fn fixed_seed_reproduces_bytes() {
        let pa = PulseParams::default();
        let (r1, t1) = generate_pulses(&pa, 99).unwrap();
        let (r2, t2) = generate_pulses(&pa, 99).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(r1.y, r2.y);
        let (s1, b1) = generate_spectrum(&SpectrumParams::default(), 4).unwrap();
        let (s2, b2) = generate_spectrum(&SpectrumParams::default(), 4).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(s1.y, s2.y);
    }

    #[test]
    fn spectrum_has_reaction_ion_peak_and_quiet_prefix() {
        let (record, truth) = generate_spectrum(&SpectrumParams::default(), 21).unwrap();
        assert!(truth[0].reaction_ion);
        assert_eq!(truth.len(), 4);
        // Peak-free region before the reaction ion peak.
        let quiet: Vec<f64> = record
            .x
            .iter()
            .zip(&record.y)
            .filter(|(x, _)| **x > 0.03 && **x < 0.4)
            .map(|(_, y)| *y)
            .collect();
        let max = quiet.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(max < 0.05, "quiet region should be noise-only, got {max}");
    }

    #[test]
    fn infeasible_requests_error() {
        let params = PulseParams {
            samples: 50,
            pulses: 10,
            min_separation: 20,
            ..PulseParams::default()
        };
        assert!(generate_pulses(&params, 1).is_err());
        let params = DiveParams {
            samples: 50,
            dives: 5,
            ..DiveParams::default()
        };
        assert!(generate_dive(&params, 1).is_err());
    }
}
