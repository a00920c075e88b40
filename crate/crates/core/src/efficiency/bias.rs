//! Systematic bias of the efficiency-ratio estimator.
//!
//! Click probabilities are evaluated exactly rather than sampled: each trial
//! emits zero, one or two independent singlet pairs, every photon may be
//! attenuated by polarization-dependent loss before reaching a detector of
//! given efficiency, and each detector may also fire on background. The
//! resulting expected rates go through [`bob_ratio`] and are compared with
//! the true `β^(+)/β^(−)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{bob_ratio, RateCell, RateTable, MINUS, PLUS};
use crate::bloch::BlochVector;
use crate::error::{Error, Result};

/// Polarization that suffers the extra loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossyPolarization {
    H,
    V,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasConfig {
    /// Background clicks per second at each detector.
    pub background_rate: f64,
    /// Trials (pump pulses) per second.
    pub trial_rate: f64,
    /// Probability of one pair per trial; two pairs occur with its square.
    pub pair_prob: f64,
    /// Fraction of the lossy polarization's intensity removed.
    pub pdl_fraction: f64,
    pub lossy: LossyPolarization,
    /// Alice's `[+, −]` detector efficiencies.
    pub alice_eff: [f64; 2],
    /// Bob's `[+, −]` detector efficiencies.
    pub bob_eff: [f64; 2],
    /// Common measurement axis of both parties.
    pub axis: BlochVector,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            background_rate: 200.0,
            trial_rate: 80e6,
            pair_prob: 0.0072,
            pdl_fraction: 0.0,
            lossy: LossyPolarization::H,
            alice_eff: [0.8, 0.8],
            bob_eff: [0.8, 0.8 / 1.16],
            axis: BlochVector::Z,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BiasReport {
    pub true_ratio: f64,
    pub estimated_ratio: f64,
    /// `estimated − true`; negative means underestimation.
    pub bias: f64,
    pub relative_bias: f64,
}

type M2 = [[Complex64; 2]; 2];

fn projector(axis: BlochVector, sign: f64) -> M2 {
    let (x, y, z) = (axis.x * sign, axis.y * sign, axis.z * sign);
    let c = |re: f64, im: f64| Complex64::new(re, im);
    [[c(0.5 * (1.0 + z), 0.0), c(0.5 * x, -0.5 * y)], [c(0.5 * x, 0.5 * y), c(0.5 * (1.0 - z), 0.0)]]
}

/// `d · m · d` for a real diagonal `d`.
fn sandwich(d: [f64; 2], m: &M2) -> M2 {
    let mut out = *m;
    for (a, row) in out.iter_mut().enumerate() {
        for (b, x) in row.iter_mut().enumerate() {
            *x *= d[a] * d[b];
        }
    }
    out
}

/// `⟨ψ|X ⊗ Y|ψ⟩` for the singlet `(|01⟩ − |10⟩)/√2`.
fn singlet_expectation(x: &M2, y: &M2) -> f64 {
    (0.5 * (x[0][0] * y[1][1] - x[0][1] * y[1][0] - x[1][0] * y[0][1] + x[1][1] * y[0][0])).re
}

/// Per-pair probabilities of each party's photon ending as `+`, `−` or lost
/// (index 2) after polarization-dependent loss.
fn pair_outcomes(cfg: &BiasConfig) -> [[f64; 3]; 3] {
    // Basis |0⟩ = V, |1⟩ = H.
    let keep = (1.0 - cfg.pdl_fraction).sqrt();
    let lose = cfg.pdl_fraction.sqrt();
    let (t, l) = match cfg.lossy {
        LossyPolarization::H => ([1.0, keep], [0.0, lose]),
        LossyPolarization::V => ([keep, 1.0], [lose, 0.0]),
    };
    let zero = Complex64::new(0.0, 0.0);
    let lost: M2 = [[Complex64::new(l[0] * l[0], 0.0), zero], [zero, Complex64::new(l[1] * l[1], 0.0)]];
    let ops = [
        sandwich(t, &projector(cfg.axis, 1.0)),
        sandwich(t, &projector(cfg.axis, -1.0)),
        lost,
    ];
    let mut out = [[0.0; 3]; 3];
    for (a, oa) in ops.iter().enumerate() {
        for (b, ob) in ops.iter().enumerate() {
            out[a][b] = singlet_expectation(oa, ob);
        }
    }
    out
}

// Detector bits: A+, A−, B+, B−.
const A_BIT: [usize; 2] = [1, 2];
const B_BIT: [usize; 2] = [4, 8];

/// Distribution over the set of detectors clicked by one pair.
fn pair_clicks(cfg: &BiasConfig) -> [f64; 16] {
    let p = pair_outcomes(cfg);
    let mut out = [0.0; 16];
    for (a, row) in p.iter().enumerate() {
        for (b, &pab) in row.iter().enumerate() {
            let alice: Vec<(usize, f64)> = if a < 2 {
                vec![(A_BIT[a], cfg.alice_eff[a]), (0, 1.0 - cfg.alice_eff[a])]
            } else {
                vec![(0, 1.0)]
            };
            let bob: Vec<(usize, f64)> = if b < 2 {
                vec![(B_BIT[b], cfg.bob_eff[b]), (0, 1.0 - cfg.bob_eff[b])]
            } else {
                vec![(0, 1.0)]
            };
            for (ma, pa) in &alice {
                for (mb, pb) in &bob {
                    out[ma | mb] += pab * pa * pb;
                }
            }
        }
    }
    out
}

fn union(x: &[f64; 16], y: &[f64; 16]) -> [f64; 16] {
    let mut out = [0.0; 16];
    for (i, a) in x.iter().enumerate() {
        for (j, b) in y.iter().enumerate() {
            out[i | j] += a * b;
        }
    }
    out
}

/// Expected rates for the matched setting under the configured imperfections.
pub fn biased_rates(cfg: &BiasConfig) -> Result<RateTable> {
    let p = cfg.pair_prob;
    let q = cfg.background_rate / cfg.trial_rate;
    if !(p >= 0.0 && p + p * p <= 1.0) {
        return Err(Error::invalid(format!("pair probability must lie in [0, 0.618], got {p}")));
    }
    if !(cfg.background_rate >= 0.0 && cfg.trial_rate > 0.0 && q <= 1.0) {
        return Err(Error::invalid("background rate must be >= 0 and below the trial rate"));
    }
    if !(0.0..1.0).contains(&cfg.pdl_fraction) {
        return Err(Error::invalid("loss fraction must lie in [0, 1)"));
    }
    if cfg.alice_eff.iter().chain(&cfg.bob_eff).any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::invalid("efficiencies must lie in [0, 1]"));
    }
    cfg.axis.require_unit("measurement axis")?;

    let one = pair_clicks(cfg);
    let two = union(&one, &one);
    let mut trial = [0.0; 16];
    trial[0] = 1.0 - p - p * p;
    for m in 0..16 {
        trial[m] += p * one[m] + p * p * two[m];
    }
    let mut background = [0.0; 16];
    for (m, slot) in background.iter_mut().enumerate() {
        *slot = (0..4).map(|bit| if m >> bit & 1 == 1 { q } else { 1.0 - q }).product();
    }
    let clicks = union(&trial, &background);

    let rate = |mask: usize| -> f64 {
        cfg.trial_rate * clicks.iter().enumerate().filter(|(m, _)| m & mask == mask).map(|(_, x)| x).sum::<f64>()
    };
    let mut cell = RateCell::default();
    for a in [PLUS, MINUS] {
        for b in [PLUS, MINUS] {
            cell.c[a][b] = rate(A_BIT[a] | B_BIT[b]);
        }
        cell.a[a] = rate(A_BIT[a]);
        cell.b[a] = rate(B_BIT[a]);
    }
    Ok(RateTable { cells: [((0, 0), cell)].into(), pair_rate: None, duration: None })
}

/// Signed bias of the efficiency-ratio estimate under `cfg`.
pub fn bias_study(cfg: &BiasConfig) -> Result<BiasReport> {
    let table = biased_rates(cfg)?;
    let estimated_ratio = bob_ratio(&table, 0)?;
    let true_ratio = cfg.bob_eff[PLUS] / cfg.bob_eff[MINUS];
    let bias = estimated_ratio - true_ratio;
    Ok(BiasReport { true_ratio, estimated_ratio, bias, relative_bias: bias / true_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean() -> BiasConfig {
        BiasConfig { background_rate: 0.0, pair_prob: 1e-9, ..BiasConfig::default() }
    }

    #[test]
    fn singlet_outcomes_are_anticorrelated() {
        let p = pair_outcomes(&clean());
        assert!((p[0][1] - 0.5).abs() < 1e-15 && (p[1][0] - 0.5).abs() < 1e-15);
        assert!(p[0][0].abs() < 1e-15 && p[2][2].abs() < 1e-15);
    }

    #[test]
    fn ideal_source_is_unbiased() {
        let r = bias_study(&clean()).unwrap();
        assert!(r.bias.abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn background_alone_cancels() {
        let cfg = BiasConfig { pair_prob: 1e-6, ..BiasConfig::default() };
        let r = bias_study(&cfg).unwrap();
        assert!(r.bias.abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn double_pairs_cause_underestimation() {
        let r = bias_study(&BiasConfig::default()).unwrap();
        assert!(r.bias < 0.0 && r.bias.abs() > 2e-4 && r.bias.abs() < 2e-3, "{r:?}");
    }

    #[test]
    fn loss_only_matters_along_the_lossy_basis() {
        for axis in [BlochVector::X, BlochVector::Y] {
            let r = bias_study(&BiasConfig { pdl_fraction: 0.02, axis, ..clean() }).unwrap();
            assert!(r.relative_bias.abs() < 1e-9);
        }
        let h = bias_study(&BiasConfig { pdl_fraction: 0.02, ..clean() }).unwrap();
        let v = bias_study(&BiasConfig { pdl_fraction: 0.02, lossy: LossyPolarization::V, ..clean() }).unwrap();
        assert!((h.relative_bias - 0.02 / 0.98).abs() < 1e-6, "{h:?}");
        assert!((v.relative_bias + 0.02).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(bias_study(&BiasConfig { pair_prob: -0.1, ..clean() }).is_err());
        assert!(bias_study(&BiasConfig { pdl_fraction: 1.0, ..clean() }).is_err());
        assert!(bias_study(&BiasConfig { trial_rate: 0.0, ..clean() }).is_err());
    }
}
