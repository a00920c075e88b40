//! Communication-assisted steering bounds.
//!
//! A cheating strategy fixes Alice's announced outcome `α(j) ∈ {+1, 0, −1}`
//! and the message `ℓ(j) ∈ {0..d}` she sends to the accomplice near Bob for
//! every setting `j`. For a fixed strategy the accomplice's best state for
//! message `l` is the normalized sum `Σ_{ℓ(j)=l} α(j) b_j`, so the value of
//! the strategy is
//!
//! ```text
//! (1/n) [ −r·m + Σ_l |Σ_{j: ℓ(j)=l} α(j) b_j| ],   m = #{j : α(j) ≠ 0}
//! ```
//!
//! Mixed accomplice states are never better: the objective is linear in the
//! state, so it is maximized at a pure state.
//!
//! The bound `h(r)` is the maximum over all `3^n · d^n` strategies. Grouping
//! strategies by `m` turns `h` into the upper envelope of `n + 1` lines
//! `C_m − r·m/n`, which [`StrategyTable`] stores once so that any `r` (and the
//! optimal gain for any efficiency) can be read off without re-enumerating.

use rayon::prelude::*;
use serde::Serialize;

use crate::bloch::{max_eigen_sum, BlochVector};
use crate::error::{Error, Result};
use crate::measurement::MeasurementSet;

/// Values closer than this are treated as ties.
pub const TIE_TOL: f64 = 1e-12;

/// Largest strategy space the exhaustive search will walk.
pub const MAX_STRATEGIES: u64 = 2_000_000_000;

/// Deterministic outcome and message assignment for every setting.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct CheatStrategy {
    alpha: Vec<i8>,
    /// Zero-based message label per setting.
    ell: Vec<usize>,
    d: usize,
}

impl CheatStrategy {
    pub fn new(alpha: Vec<i8>, ell: Vec<usize>, d: usize) -> Result<Self> {
        if alpha.len() != ell.len() {
            return Err(Error::invalid("alpha and ell must cover the same settings"));
        }
        if d == 0 {
            return Err(Error::invalid("message alphabet must be non-empty"));
        }
        if alpha.iter().any(|a| !matches!(a, -1..=1)) {
            return Err(Error::invalid("alpha values must be +1, 0 or -1"));
        }
        if ell.iter().any(|&l| l >= d) {
            return Err(Error::invalid(format!("message labels must be < {d}")));
        }
        Ok(CheatStrategy { alpha, ell, d })
    }

    /// Strategy that always announces a null result.
    pub fn null(n: usize, d: usize) -> Self {
        CheatStrategy { alpha: vec![0; n], ell: vec![0; n], d }
    }

    pub fn alpha(&self) -> &[i8] {
        &self.alpha
    }

    pub fn ell(&self) -> &[usize] {
        &self.ell
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Number of settings with a non-null announced outcome.
    pub fn m(&self) -> usize {
        self.alpha.iter().filter(|&&a| a != 0).count()
    }

    /// Position in lexicographic order (α first with −1 < 0 < +1, then ℓ).
    pub fn index(&self) -> u64 {
        let d = self.d as u64;
        let n = self.alpha.len() as u32;
        let a = self.alpha.iter().fold(0u64, |acc, &x| acc * 3 + (x + 1) as u64);
        let l = self.ell.iter().fold(0u64, |acc, &x| acc * d + x as u64);
        a * d.pow(n) + l
    }

    pub fn from_index(index: u64, n: usize, d: usize) -> Self {
        let dn = (d as u64).pow(n as u32);
        let (mut a, mut l) = (index / dn, index % dn);
        let mut alpha = vec![0i8; n];
        let mut ell = vec![0usize; n];
        for j in (0..n).rev() {
            alpha[j] = (a % 3) as i8 - 1;
            a /= 3;
            ell[j] = (l % d as u64) as usize;
            l /= d as u64;
        }
        CheatStrategy { alpha, ell, d }
    }
}

/// The accomplice's pure states, one per message; `None` where the message
/// group sums to zero and any state is optimal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FenellaEnsemble {
    pub states: Vec<Option<BlochVector>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundResult {
    pub r: f64,
    pub h: f64,
    pub strategy: CheatStrategy,
    pub ensemble: FenellaEnsemble,
}

/// `Σ_l |Σ_{ℓ(j)=l} α(j) b_j|` without the `1/n` factor or gain term.
fn grouped_norm_sum(alpha: &[i8], ell: &[usize], axes: &[BlochVector], groups: &mut [BlochVector]) -> f64 {
    groups.iter_mut().for_each(|g| *g = BlochVector::ZERO);
    for ((&a, &l), &b) in alpha.iter().zip(ell).zip(axes) {
        if a != 0 {
            groups[l] += b * f64::from(a);
        }
    }
    groups.iter().map(|g| g.norm()).sum()
}

/// Value of one strategy at gain `r`, with the optimal accomplice ensemble.
pub fn strategy_value(
    strategy: &CheatStrategy,
    meas: &MeasurementSet,
    r: f64,
) -> Result<(f64, FenellaEnsemble)> {
    let n = meas.len();
    if strategy.len() != n {
        return Err(Error::invalid(format!(
            "strategy covers {} settings, measurement set has {n}",
            strategy.len()
        )));
    }
    let mut total = -r * strategy.m() as f64;
    let mut states = Vec::with_capacity(strategy.d);
    for l in 0..strategy.d {
        let terms = (0..n)
            .filter(|&j| strategy.ell[j] == l && strategy.alpha[j] != 0)
            .map(|j| (f64::from(strategy.alpha[j]), meas.axes()[j]));
        let (value, direction) = max_eigen_sum(terms);
        total += value;
        states.push(direction);
    }
    Ok((total / n as f64, FenellaEnsemble { states }))
}

/// Best strategy among those announcing exactly `m` non-null outcomes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeLine {
    pub m: usize,
    /// `C_m`: the line's value at `r = 0`.
    pub intercept: f64,
    /// Lexicographically smallest strategy attaining `C_m`.
    pub strategy_index: u64,
}

impl EnvelopeLine {
    pub fn value_at(&self, r: f64, n: usize) -> f64 {
        self.intercept - r * self.m as f64 / n as f64
    }
}

/// Optimal gain for a given heralding efficiency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GainOptimum {
    pub eta: f64,
    pub r: f64,
    pub h: f64,
    /// Minimum Werner singlet fraction `h/η + r` needed for a violation.
    pub mu_min: f64,
}

impl GainOptimum {
    /// Whether any state with `μ ≤ 1` can violate the inequality.
    pub fn violable(&self) -> bool {
        self.mu_min < 1.0 - TIE_TOL
    }
}

/// Envelope of the exhaustive strategy search for one measurement set and
/// message alphabet.
#[derive(Clone, Debug, Serialize)]
pub struct StrategyTable {
    n: usize,
    d: usize,
    lines: Vec<EnvelopeLine>,
}

impl StrategyTable {
    pub fn build(meas: &MeasurementSet, d: usize) -> Result<Self> {
        let n = meas.len();
        if d < 1 || d > n - 1 {
            return Err(Error::invalid(format!(
                "message alphabet size must be in 1..={}, got {d}",
                n - 1
            )));
        }
        let alphas = 3u64
            .checked_pow(n as u32)
            .ok_or_else(|| Error::invalid("too many settings"))?;
        let ells = (d as u64)
            .checked_pow(n as u32)
            .ok_or_else(|| Error::invalid("too many settings"))?;
        if alphas.saturating_mul(ells) > MAX_STRATEGIES {
            return Err(Error::invalid(format!(
                "strategy space 3^{n}·{d}^{n} exceeds the exhaustive-search limit"
            )));
        }
        let axes = meas.axes();

        let decode = |code: u64, base: u64, out: &mut [usize]| {
            let mut c = code;
            for slot in out.iter_mut().rev() {
                *slot = (c % base) as usize;
                c /= base;
            }
        };
        let alpha_of = |code: u64| {
            let mut digits = vec![0usize; n];
            decode(code, 3, &mut digits);
            digits.into_iter().map(|x| x as i8 - 1).collect::<Vec<i8>>()
        };

        // Pass 1: exact per-m maxima (max is order independent).
        let maxima = (0..alphas)
            .into_par_iter()
            .map(|a_code| {
                let alpha = alpha_of(a_code);
                let m = alpha.iter().filter(|&&a| a != 0).count();
                let mut ell = vec![0usize; n];
                let mut groups = vec![BlochVector::ZERO; d];
                let mut best = f64::NEG_INFINITY;
                for l_code in 0..ells {
                    decode(l_code, d as u64, &mut ell);
                    best = best.max(grouped_norm_sum(&alpha, &ell, axes, &mut groups));
                }
                let mut out = vec![f64::NEG_INFINITY; n + 1];
                out[m] = best;
                out
            })
            .reduce(
                || vec![f64::NEG_INFINITY; n + 1],
                |a, b| a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect(),
            );

        // Pass 2: smallest index reaching each maximum within tolerance.
        let first = (0..alphas)
            .into_par_iter()
            .map(|a_code| {
                let alpha = alpha_of(a_code);
                let m = alpha.iter().filter(|&&a| a != 0).count();
                let mut ell = vec![0usize; n];
                let mut groups = vec![BlochVector::ZERO; d];
                let mut out = vec![u64::MAX; n + 1];
                for l_code in 0..ells {
                    decode(l_code, d as u64, &mut ell);
                    let c = grouped_norm_sum(&alpha, &ell, axes, &mut groups);
                    if c >= maxima[m] - TIE_TOL {
                        out[m] = a_code * ells + l_code;
                        break;
                    }
                }
                out
            })
            .reduce(
                || vec![u64::MAX; n + 1],
                |a, b| a.iter().zip(&b).map(|(x, y)| *x.min(y)).collect(),
            );

        let lines = (0..=n)
            .map(|m| EnvelopeLine {
                m,
                intercept: maxima[m] / n as f64,
                strategy_index: first[m],
            })
            .collect();
        Ok(StrategyTable { n, d, lines })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lines(&self) -> &[EnvelopeLine] {
        &self.lines
    }

    /// Envelope line that is maximal at `r`, ties broken toward the
    /// lexicographically smallest strategy.
    pub fn argmax(&self, r: f64) -> &EnvelopeLine {
        let best = self.bound(r);
        self.lines
            .iter()
            .filter(|l| l.value_at(r, self.n) >= best - TIE_TOL)
            .min_by_key(|l| l.strategy_index)
            .expect("envelope has n + 1 lines")
    }

    /// `h(r)`.
    pub fn bound(&self, r: f64) -> f64 {
        self.lines
            .iter()
            .map(|l| l.value_at(r, self.n))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn strategy(&self, line: &EnvelopeLine) -> CheatStrategy {
        CheatStrategy::from_index(line.strategy_index, self.n, self.d)
    }

    /// Pairwise line intersections inside `[0, 1]`, plus both endpoints,
    /// sorted ascending.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![0.0, 1.0];
        for (i, s) in self.lines.iter().enumerate() {
            for t in &self.lines[i + 1..] {
                let r = self.n as f64 * (s.intercept - t.intercept) / (s.m as f64 - t.m as f64);
                if (0.0..=1.0).contains(&r) {
                    out.push(r);
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() <= TIE_TOL);
        out
    }

    /// Minimizes `h(r)/η + r` over `r ∈ [0, 1]`.
    ///
    /// The objective is convex and piecewise linear, so its minimum sits on
    /// a breakpoint of the envelope; ties go to the smallest `r`.
    pub fn optimal_gain(&self, eta: f64) -> Result<GainOptimum> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::invalid(format!("efficiency must lie in (0, 1], got {eta}")));
        }
        let objective = |r: f64| self.bound(r) / eta + r;
        let candidates = self.breakpoints();
        let best = candidates
            .iter()
            .map(|&r| objective(r))
            .fold(f64::INFINITY, f64::min);
        let r = *candidates
            .iter()
            .find(|&&r| objective(r) <= best + TIE_TOL)
            .expect("candidate list is non-empty");
        let h = self.bound(r);
        Ok(GainOptimum { eta, r, h, mu_min: h / eta + r })
    }

    pub fn result_at(&self, meas: &MeasurementSet, r: f64) -> Result<BoundResult> {
        let line = self.argmax(r);
        let strategy = self.strategy(line);
        let (_, ensemble) = strategy_value(&strategy, meas, r)?;
        Ok(BoundResult { r, h: self.bound(r), strategy, ensemble })
    }
}

fn check_gain(r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::invalid(format!("gain parameter must lie in [0, 1], got {r}")))
    }
}

/// Exact `h^n_{H0}(r)` with an optimal strategy and ensemble.
pub fn steering_bound(meas: &MeasurementSet, d: usize, r: f64) -> Result<BoundResult> {
    check_gain(r)?;
    StrategyTable::build(meas, d)?.result_at(meas, r)
}

pub fn optimal_gain(meas: &MeasurementSet, d: usize, eta: f64) -> Result<GainOptimum> {
    StrategyTable::build(meas, d)?.optimal_gain(eta)
}

/// Minimum required singlet fraction across an efficiency grid.
pub fn min_purity_curve(
    meas: &MeasurementSet,
    d: usize,
    eta_grid: &[f64],
) -> Result<Vec<GainOptimum>> {
    let table = StrategyTable::build(meas, d)?;
    eta_grid.iter().map(|&eta| table.optimal_gain(eta)).collect()
}

/// Largest quantum violation `1 − h(0)`, reached by a singlet measured with
/// matched ideal projective settings and lossless detection.
pub fn tsirelson(meas: &MeasurementSet, d: usize) -> Result<f64> {
    Ok(1.0 - StrategyTable::build(meas, d)?.bound(0.0))
}
