//! Worst-case measurement sets.
//!
//! Tomography only pins Bob's axes down to within `σ_j`. A conservative
//! analysis assumes the true axes sit `k·σ_j` closer together than the
//! estimates, which always makes cheating easier. Without messaging all axes
//! (with the best choice of signs) are pulled toward their common mean; with a
//! one-bit message only the closest pair matters, since a cheat that can send
//! a bit handles the remaining setting on its own.

use serde::Serialize;

use crate::bloch::{rotate_toward, BlochVector};
use crate::bounds::{GainOptimum, StrategyTable};
use crate::error::{Error, Result};
use crate::measurement::MeasurementSet;

pub const DEFAULT_K_SIGMA: f64 = 5.0;

/// Scores closer than this are considered tied when choosing a combination.
const SCORE_TOL: f64 = 1e-12;

/// Which signed axes were pulled together, and toward what.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Combination {
    /// Sign applied to each input axis before rotating.
    pub signs: Vec<i8>,
    /// Settings that were rotated; the rest are left as they were.
    pub members: Vec<usize>,
    /// Normalized mean of the signed members.
    pub mean: BlochVector,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConservativeResult {
    pub rotated: MeasurementSet,
    pub combo: Combination,
    pub k_sigma: f64,
}

fn check_k(k_sigma: f64) -> Result<()> {
    if k_sigma >= 0.0 && k_sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("k_sigma must be a finite value >= 0, got {k_sigma}")))
    }
}

fn signed_mean(axes: &[BlochVector], members: &[usize], signs: &[i8]) -> Option<BlochVector> {
    members
        .iter()
        .map(|&j| axes[j] * f64::from(signs[j]))
        .sum::<BlochVector>()
        .normalized()
}

fn apply(meas: &MeasurementSet, combo: Combination, k_sigma: f64) -> Result<ConservativeResult> {
    let axes = meas.axes();
    let mut rotated = Vec::with_capacity(axes.len());
    for (j, (&b, &sigma)) in axes.iter().zip(meas.sigmas()).enumerate() {
        let signed = b * f64::from(combo.signs[j]);
        if combo.members.contains(&j) {
            rotated.push(rotate_toward(signed, combo.mean, k_sigma * sigma)?);
        } else {
            rotated.push(signed);
        }
    }
    Ok(ConservativeResult {
        rotated: MeasurementSet::new(rotated, meas.sigmas().to_vec())?,
        combo,
        k_sigma,
    })
}

/// Tie-break preference for sign vectors: more `+1`s first, then
/// lexicographically larger (so `+` before `−` on earlier settings).
fn sign_preference(signs: &[i8]) -> (usize, Vec<i8>) {
    (signs.iter().filter(|&&s| s > 0).count(), signs.to_vec())
}

/// Pulls all (signed) axes toward the mean of the tightest sign combination.
///
/// Among the `2^n` sign choices the one whose normalized mean has the largest
/// minimum inner product with its members is used; ties go to the larger sum
/// of inner products, then to the combination with more positive signs.
pub fn worst_case_no_message(meas: &MeasurementSet, k_sigma: f64) -> Result<ConservativeResult> {
    check_k(k_sigma)?;
    let n = meas.len();
    if n > 20 {
        return Err(Error::invalid("sign search supports at most 20 settings"));
    }
    let axes = meas.axes();
    let members: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, f64, Vec<i8>, BlochVector)> = None;
    for code in 0u32..(1 << n) {
        let signs: Vec<i8> = (0..n)
            .map(|j| if code >> (n - 1 - j) & 1 == 1 { -1 } else { 1 })
            .collect();
        let Some(mean) = signed_mean(axes, &members, &signs) else {
            continue;
        };
        let products = (0..n).map(|j| axes[j].dot(mean) * f64::from(signs[j]));
        let min = products.clone().fold(f64::INFINITY, f64::min);
        let sum: f64 = products.sum();
        let better = match &best {
            None => true,
            Some((bmin, bsum, bsigns, _)) => {
                if (min - bmin).abs() > SCORE_TOL {
                    min > *bmin
                } else if (sum - bsum).abs() > SCORE_TOL {
                    sum > *bsum
                } else {
                    sign_preference(&signs) > sign_preference(bsigns)
                }
            }
        };
        if better {
            best = Some((min, sum, signs, mean));
        }
    }
    let (_, _, signs, mean) = best.ok_or_else(|| {
        Error::DegenerateGeometry("every signed combination of the axes sums to zero".into())
    })?;
    apply(meas, Combination { signs, members, mean }, k_sigma)
}

/// Every signed pair `(±b_u, ±b_v)` with `u < v`, best-aligned first.
///
/// Of the two mirror-image sign choices for a pair only the one with a
/// positive first member is kept.
fn signed_pairs(meas: &MeasurementSet) -> Vec<(f64, usize, usize, i8)> {
    let axes = meas.axes();
    let mut pairs = Vec::new();
    for u in 0..axes.len() {
        for v in u + 1..axes.len() {
            for sv in [1i8, -1] {
                pairs.push((axes[u].dot(axes[v]) * f64::from(sv), u, v, sv));
            }
        }
    }
    // Stable sort keeps enumeration order among exact ties.
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn pair_combination(meas: &MeasurementSet, u: usize, v: usize, sv: i8) -> Result<Combination> {
    let mut signs = vec![1i8; meas.len()];
    signs[v] = sv;
    let members = vec![u, v];
    let mean = signed_mean(meas.axes(), &members, &signs).ok_or_else(|| {
        Error::DegenerateGeometry(format!(
            "settings {} and {} are antiparallel; their mean is undefined",
            u + 1,
            v + 1
        ))
    })?;
    Ok(Combination { signs, members, mean })
}

/// Pulls only the closest signed pair toward its mean.
pub fn worst_case_one_bit(meas: &MeasurementSet, k_sigma: f64) -> Result<ConservativeResult> {
    check_k(k_sigma)?;
    let (_, u, v, sv) = signed_pairs(meas)[0];
    apply(meas, pair_combination(meas, u, v, sv)?, k_sigma)
}

/// Rotates each candidate pair in turn and keeps the one that demands the
/// highest state purity at efficiency `eta` — the least favourable outcome
/// for the experimenter.
pub fn worst_case_one_bit_exhaustive(
    meas: &MeasurementSet,
    k_sigma: f64,
    d: usize,
    eta: f64,
) -> Result<(ConservativeResult, GainOptimum)> {
    check_k(k_sigma)?;
    let mut best: Option<(ConservativeResult, GainOptimum)> = None;
    for (_, u, v, sv) in signed_pairs(meas) {
        // The mirrored sign only matters through the pair's mean; keep the
        // aligned one.
        if meas.axes()[u].dot(meas.axes()[v]) * f64::from(sv) < 0.0 {
            continue;
        }
        let Ok(combo) = pair_combination(meas, u, v, sv) else {
            continue;
        };
        let result = apply(meas, combo, k_sigma)?;
        let optimum = StrategyTable::build(&result.rotated, d)?.optimal_gain(eta)?;
        if best.as_ref().is_none_or(|(_, b)| optimum.mu_min > b.mu_min + SCORE_TOL) {
            best = Some((result, optimum));
        }
    }
    best.ok_or_else(|| Error::DegenerateGeometry("no pair of settings has a defined mean".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{WORST_NO_MESSAGE_AXES, WORST_ONE_BIT_AXES};

    fn close_to(a: BlochVector, raw: [f64; 3], tol: f64) {
        let b = BlochVector::from_array(raw);
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            assert!((x - y).abs() <= tol, "{a} vs {b}");
        }
    }

    #[test]
    fn reproduces_no_message_table() {
        let out = worst_case_no_message(&MeasurementSet::measured(), 5.0).unwrap();
        assert_eq!(out.combo.signs, vec![-1, 1, 1]);
        for (a, raw) in out.rotated.axes().iter().zip(WORST_NO_MESSAGE_AXES) {
            close_to(*a, raw, 1e-3);
        }
    }

    #[test]
    fn reproduces_one_bit_table() {
        let table = MeasurementSet::measured();
        let out = worst_case_one_bit(&table, 5.0).unwrap();
        assert_eq!(out.combo.members, vec![1, 2]);
        assert_eq!(out.rotated.axes()[0], table.axes()[0]);
        for (a, raw) in out.rotated.axes().iter().zip(WORST_ONE_BIT_AXES).skip(1) {
            close_to(*a, raw, 1e-3);
        }
    }

    #[test]
    fn zero_multiplier_keeps_signed_axes() {
        let table = MeasurementSet::measured();
        let out = worst_case_no_message(&table, 0.0).unwrap();
        for ((a, b), s) in out.rotated.axes().iter().zip(table.axes()).zip(&out.combo.signs) {
            assert_eq!(*a, *b * f64::from(*s));
        }
        let out = worst_case_one_bit(&table, 0.0).unwrap();
        assert_eq!(out.rotated.axes(), table.axes());
    }

    #[test]
    fn identical_axes_stay_put() {
        let meas = MeasurementSet::uniform(vec![BlochVector::Z; 3], 0.1).unwrap();
        let out = worst_case_no_message(&meas, 50.0).unwrap();
        assert!(out.rotated.axes().iter().all(|a| a.distance(BlochVector::Z) < 1e-15));
        let out = worst_case_one_bit(&meas, 50.0).unwrap();
        assert!(out.rotated.axes().iter().all(|a| a.distance(BlochVector::Z) < 1e-15));
    }

    #[test]
    fn large_multiplier_clamps_at_mean() {
        let out = worst_case_one_bit(&MeasurementSet::octahedral().with_sigmas(1.0), 10.0).unwrap();
        let [u, v] = [out.combo.members[0], out.combo.members[1]];
        assert!(out.rotated.axes()[u].distance(out.combo.mean) < 1e-15);
        assert!(out.rotated.axes()[v].distance(out.combo.mean) < 1e-15);
    }

    #[test]
    fn rejects_negative_multiplier() {
        assert!(worst_case_no_message(&MeasurementSet::octahedral(), -1.0).is_err());
        assert!(worst_case_one_bit(&MeasurementSet::octahedral(), f64::NAN).is_err());
    }

    #[test]
    fn exhaustive_mode_is_at_least_as_strict() {
        let table = MeasurementSet::measured();
        let default = worst_case_one_bit(&table, 5.0).unwrap();
        let base = StrategyTable::build(&default.rotated, 2).unwrap().optimal_gain(0.748).unwrap();
        let (_, worst) = worst_case_one_bit_exhaustive(&table, 5.0, 2, 0.748).unwrap();
        assert!(worst.mu_min >= base.mu_min - 1e-12);
    }
}
