//! Heralding-efficiency estimation from singles and coincidence rates.
//!
//! With a pair rate `N`, per-detector efficiencies `α_k^(a)`, `β_j^(b)` and
//! outcome probabilities `p^(ab)` for settings `(k, j)`, the expected rates are
//!
//! ```text
//! C^(ab) = N α^(a) β^(b) p^(ab)
//! A^(a)  = N α^(a) (p^(a+) + p^(a−))
//! B^(b)  = N β^(b) (p^(+b) + p^(−b))
//! ```
//!
//! Every unknown except the efficiencies cancels from suitable ratios of
//! products, which is what the estimators below evaluate. The estimates are
//! least precise when outcomes are uncorrelated, where the determinant
//! `p^(+−)p^(−+) − p^(++)p^(−−)` vanishes.

pub mod bias;

use std::collections::BTreeMap;
use std::io::Read;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bias::{bias_study, BiasConfig, BiasReport, LossyPolarization};

/// Denominators smaller than this fraction of their largest term are
/// treated as singular.
pub const CONDITION_FLOOR: f64 = 1e-9;

/// Index of outcome `+1` in the `[+, −]` arrays below.
pub const PLUS: usize = 0;
/// Index of outcome `−1`.
pub const MINUS: usize = 1;

/// Rates for one setting pair `(k, j)`, outcomes indexed `[+, −]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    /// Coincidences `C[a][b]`.
    pub c: [[f64; 2]; 2],
    /// Alice singles `A[a]`.
    pub a: [f64; 2],
    /// Bob singles `B[b]`.
    pub b: [f64; 2],
}

impl RateCell {
    fn validate(&self, key: (usize, usize)) -> Result<()> {
        let all = self.c.iter().flatten().chain(&self.a).chain(&self.b);
        if all.clone().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::invalid(format!("rates for settings {key:?} must be finite and >= 0")));
        }
        for a in 0..2 {
            for b in 0..2 {
                let bound = self.a[a].min(self.b[b]);
                if self.c[a][b] > bound * (1.0 + 1e-9) + 1e-12 {
                    return Err(Error::invalid(format!(
                        "coincidence rate exceeds singles for settings {key:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Singles and coincidence rates keyed by setting pair `(k, j)`.
///
/// Singles are kept per setting pair because the outcome probabilities that
/// enter them depend on both settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub cells: BTreeMap<(usize, usize), RateCell>,
    /// Pair production rate `N`, when known.
    pub pair_rate: Option<f64>,
    /// Integration time in seconds behind each rate, for Poisson errors.
    pub duration: Option<f64>,
}

impl RateTable {
    pub fn cell(&self, k: usize, j: usize) -> Result<&RateCell> {
        self.cells
            .get(&(k, j))
            .ok_or_else(|| Error::InsufficientData(format!("no rates for settings ({k}, {j})")))
    }

    pub fn validate(&self) -> Result<()> {
        for (key, cell) in &self.cells {
            cell.validate(*key)?;
        }
        if let Some(t) = self.duration {
            if !(t > 0.0) {
                return Err(Error::invalid(format!("integration time must be > 0, got {t}")));
            }
        }
        Ok(())
    }

    /// All rates multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> RateTable {
        let mut out = self.clone();
        for cell in out.cells.values_mut() {
            cell.c.iter_mut().flatten().for_each(|x| *x *= factor);
            cell.a.iter_mut().for_each(|x| *x *= factor);
            cell.b.iter_mut().for_each(|x| *x *= factor);
        }
        out.pair_rate = out.pair_rate.map(|n| n * factor);
        out
    }
}

/// Joint outcome probabilities `p[a][b]` per setting pair.
pub type JointProbabilities = BTreeMap<(usize, usize), [[f64; 2]; 2]>;

fn check_efficiency(e: f64, who: &str) -> Result<()> {
    if (0.0..=1.0).contains(&e) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{who} efficiency must lie in [0, 1], got {e}")))
    }
}

/// Expected rates for given efficiencies (`alice[k][a]`, `bob[j][b]`, settings
/// zero-based) and outcome probabilities.
pub fn forward_rates(
    alice: &[[f64; 2]],
    bob: &[[f64; 2]],
    probs: &JointProbabilities,
    pair_rate: f64,
) -> Result<RateTable> {
    if !(pair_rate >= 0.0) {
        return Err(Error::invalid(format!("pair rate must be >= 0, got {pair_rate}")));
    }
    alice.iter().flatten().try_for_each(|&e| check_efficiency(e, "Alice"))?;
    bob.iter().flatten().try_for_each(|&e| check_efficiency(e, "Bob"))?;
    let mut cells = BTreeMap::new();
    for (&(k, j), p) in probs {
        let (al, be) = match (alice.get(k), bob.get(j)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::invalid(format!("no efficiencies for settings ({k}, {j})"))),
        };
        let total: f64 = p.iter().flatten().sum();
        if p.iter().flatten().any(|x| *x < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities for ({k}, {j}) must sum to 1")));
        }
        let mut cell = RateCell::default();
        for a in 0..2 {
            for b in 0..2 {
                cell.c[a][b] = pair_rate * al[a] * be[b] * p[a][b];
            }
            cell.a[a] = pair_rate * al[a] * (p[a][PLUS] + p[a][MINUS]);
            cell.b[a] = pair_rate * be[a] * (p[PLUS][a] + p[MINUS][a]);
        }
        cells.insert((k, j), cell);
    }
    Ok(RateTable { cells, pair_rate: Some(pair_rate), duration: None })
}

/// `num / (x − y)` with a singularity check against the larger of `x`, `y`.
fn guarded_ratio(num: f64, x: f64, y: f64, context: &str) -> Result<f64> {
    let den = x - y;
    let scale = x.abs().max(y.abs());
    if scale == 0.0 || den.abs() < CONDITION_FLOOR * scale {
        return Err(Error::IllConditioned {
            condition: if den == 0.0 { f64::INFINITY } else { scale / den.abs() },
            context: context.to_string(),
        });
    }
    Ok(num / den)
}

fn flip(x: usize) -> usize {
    1 - x
}

/// Bob's `(β^(+), β^(−))` for setting pair `(k, j)`.
pub fn bob_efficiencies(rates: &RateTable, k: usize, j: usize) -> Result<(f64, f64)> {
    let cell = rates.cell(k, j)?;
    let c = &cell.c;
    let det = c[PLUS][MINUS] * c[MINUS][PLUS] - c[PLUS][PLUS] * c[MINUS][MINUS];
    let one = |b: usize| {
        let nb = flip(b);
        guarded_ratio(
            det,
            c[b][nb] * cell.a[nb],
            c[nb][nb] * cell.a[b],
            &format!("Bob efficiency for settings ({k}, {j})"),
        )
    };
    Ok((one(PLUS)?, one(MINUS)?))
}

/// Alice's `(α^(+), α^(−))` for setting pair `(k, j)`.
pub fn alice_efficiencies(rates: &RateTable, k: usize, j: usize) -> Result<(f64, f64)> {
    let cell = rates.cell(k, j)?;
    let c = &cell.c;
    let det = c[PLUS][MINUS] * c[MINUS][PLUS] - c[PLUS][PLUS] * c[MINUS][MINUS];
    let one = |a: usize| {
        let na = flip(a);
        guarded_ratio(
            det,
            c[na][a] * cell.b[na],
            c[na][na] * cell.b[a],
            &format!("Alice efficiency for settings ({k}, {j})"),
        )
    };
    Ok((one(PLUS)?, one(MINUS)?))
}

fn ratio_parts(cell: &RateCell) -> (f64, f64, f64, f64) {
    let (c, a) = (&cell.c, &cell.a);
    (
        c[MINUS][PLUS] * a[PLUS],
        c[PLUS][PLUS] * a[MINUS],
        c[PLUS][MINUS] * a[MINUS],
        c[MINUS][MINUS] * a[PLUS],
    )
}

fn ratio_of(cell: &RateCell, j: usize) -> Result<f64> {
    let (u1, u2, v1, v2) = ratio_parts(cell);
    let f = guarded_ratio(u1 - u2, v1, v2, &format!("Bob efficiency ratio for setting {j}"))?;
    if u1 - u2 == 0.0 {
        return Err(Error::IllConditioned {
            condition: f64::INFINITY,
            context: format!("Bob efficiency ratio for setting {j} has a zero numerator"),
        });
    }
    Ok(f)
}

/// `β_j^(+)/β_j^(−)` from matched-setting coincidences and Alice's singles.
pub fn bob_ratio(rates: &RateTable, j: usize) -> Result<f64> {
    ratio_of(rates.cell(j, j)?, j)
}

/// Ratio with its first-order Poisson standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub ratio: f64,
    pub std_error: f64,
}

/// [`bob_ratio`] with uncertainty propagated from Poisson counts over the
/// table's integration time, treating each rate as independent.
pub fn bob_ratio_with_error(rates: &RateTable, j: usize) -> Result<RatioEstimate> {
    let t = rates
        .duration
        .ok_or_else(|| Error::InsufficientData("integration time needed for uncertainties".into()))?;
    let cell = rates.cell(j, j)?;
    let f = ratio_of(cell, j)?;
    let (c, a) = (&cell.c, &cell.a);
    let v = c[PLUS][MINUS] * a[MINUS] - c[MINUS][MINUS] * a[PLUS];
    let grads = [
        (a[PLUS] / v, c[MINUS][PLUS]),
        (-a[MINUS] / v, c[PLUS][PLUS]),
        (-f * a[MINUS] / v, c[PLUS][MINUS]),
        (f * a[PLUS] / v, c[MINUS][MINUS]),
        ((c[MINUS][PLUS] + f * c[MINUS][MINUS]) / v, a[PLUS]),
        ((-c[PLUS][PLUS] - f * c[PLUS][MINUS]) / v, a[MINUS]),
    ];
    let var: f64 = grads.iter().map(|(g, rate)| g * g * rate / t).sum();
    Ok(RatioEstimate { ratio: f, std_error: var.sqrt() })
}

/// Cross-check of [`bob_ratio_with_error`]: redraws every count from a
/// Poisson law and reports the mean and spread of the resulting ratios.
pub fn bob_ratio_resampled(rates: &RateTable, j: usize, samples: usize, seed: u64) -> Result<RatioEstimate> {
    let t = rates
        .duration
        .ok_or_else(|| Error::InsufficientData("integration time needed for resampling".into()))?;
    if samples < 2 {
        return Err(Error::invalid("need at least 2 resamples"));
    }
    let cell = *rates.cell(j, j)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rate: f64| -> f64 {
        let mean = rate * t;
        if mean <= 0.0 {
            return 0.0;
        }
        Poisson::new(mean).map(|d| d.sample(&mut rng)).unwrap_or(0.0) / t
    };
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut c = cell;
        c.c.iter_mut().flatten().for_each(|x| *x = draw(*x));
        c.a.iter_mut().for_each(|x| *x = draw(*x));
        if let Ok(f) = ratio_of(&c, j) {
            values.push(f);
        }
    }
    if values.len() < 2 {
        return Err(Error::IllConditioned {
            condition: f64::INFINITY,
            context: "resampled ratios are all singular".into(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(RatioEstimate { ratio: mean, std_error: var.sqrt() })
}

/// Non-overlapping Allan deviation of `series` averaged over `window` samples.
pub fn allan_deviation(series: &[f64], window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::invalid("window must be >= 1"));
    }
    let blocks = series.len() / window;
    if blocks < 2 {
        return Err(Error::invalid(format!(
            "need at least {} samples for window {window}, got {}",
            2 * window,
            series.len()
        )));
    }
    let means: Vec<f64> = series
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect();
    let sum: f64 = means.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    Ok((sum / (2.0 * (blocks - 1) as f64)).sqrt())
}

/// Lower-bound policy for a ratio measured in several windows: the smallest
/// window estimate, reduced by a relative loss allowance and by `k_se`
/// of that window's standard errors.
pub fn conservative_ratio(windows: &[RatioEstimate], loss_allowance: f64, k_se: f64) -> Result<f64> {
    let low = windows
        .iter()
        .min_by(|a, b| a.ratio.total_cmp(&b.ratio))
        .ok_or_else(|| Error::InsufficientData("no window estimates".into()))?;
    if !(loss_allowance >= 0.0 && k_se >= 0.0) {
        return Err(Error::invalid("allowances must be >= 0"));
    }
    Ok(low.ratio * (1.0 - loss_allowance) - k_se * low.std_error)
}

#[derive(Deserialize)]
struct RateRow {
    kind: String,
    k: Option<usize>,
    j: Option<usize>,
    a: Option<String>,
    b: Option<String>,
    rate: f64,
}

fn outcome(s: Option<&str>) -> Result<usize> {
    match s.map(str::trim) {
        Some("+") | Some("+1") => Ok(PLUS),
        Some("-") | Some("-1") => Ok(MINUS),
        other => Err(Error::Parse(format!("outcome must be + or -, got {other:?}"))),
    }
}

/// Reads a rate table from CSV with columns `kind,k,j,a,b,rate`.
///
/// `kind` is `C` (needs `a` and `b`), `A` (needs `a`), `B` (needs `b`),
/// `N` for the pair rate, or `T` for the integration time in seconds; the
/// setting columns are required for `C`, `A` and `B`. Lines starting with
/// `#` are ignored.
pub fn read_rates_csv<R: Read>(reader: R) -> Result<RateTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut table = RateTable::default();
    for row in rdr.deserialize::<RateRow>() {
        let row = row?;
        let key = || match (row.k, row.j) {
            (Some(k), Some(j)) => Ok((k, j)),
            _ => Err(Error::Parse(format!("{} row needs settings k and j", row.kind))),
        };
        match row.kind.trim() {
            "C" => {
                let cell = table.cells.entry(key()?).or_default();
                cell.c[outcome(row.a.as_deref())?][outcome(row.b.as_deref())?] = row.rate;
            }
            "A" => table.cells.entry(key()?).or_default().a[outcome(row.a.as_deref())?] = row.rate,
            "B" => table.cells.entry(key()?).or_default().b[outcome(row.b.as_deref())?] = row.rate,
            "N" => table.pair_rate = Some(row.rate),
            "T" => table.duration = Some(row.rate),
            other => return Err(Error::Parse(format!("unknown rate kind '{other}'"))),
        }
    }
    table.validate()?;
    Ok(table)
}

pub fn write_rates_csv<W: std::io::Write>(writer: W, table: &RateTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kind", "k", "j", "a", "b", "rate"])?;
    let sign = |x: usize| if x == PLUS { "+" } else { "-" };
    for (&(k, j), cell) in &table.cells {
        let (ks, js) = (k.to_string(), j.to_string());
        for a in 0..2 {
            for b in 0..2 {
                w.write_record(["C", &ks, &js, sign(a), sign(b), &cell.c[a][b].to_string()])?;
            }
        }
        for a in 0..2 {
            w.write_record(["A", &ks, &js, sign(a), "", &cell.a[a].to_string()])?;
        }
        for b in 0..2 {
            w.write_record(["B", &ks, &js, "", sign(b), &cell.b[b].to_string()])?;
        }
    }
    if let Some(n) = table.pair_rate {
        w.write_record(["N", "", "", "", "", &n.to_string()])?;
    }
    if let Some(t) = table.duration {
        w.write_record(["T", "", "", "", "", &t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: [[f64; 2]; 2]) -> JointProbabilities {
        BTreeMap::from([((0, 0), p)])
    }

    const ANTI: [[f64; 2]; 2] = [[0.02, 0.48], [0.47, 0.03]];

    #[test]
    fn lossless_anticorrelated_rates() {
        let t = forward_rates(&[[1.0; 2]], &[[1.0; 2]], &single([[0.0, 0.5], [0.5, 0.0]]), 1e6).unwrap();
        let c = t.cell(0, 0).unwrap();
        assert_eq!(c.c, [[0.0, 5e5], [5e5, 0.0]]);
        assert_eq!(c.a, [5e5; 2]);
        assert_eq!(c.b, [5e5; 2]);
    }

    #[test]
    fn zero_pair_rate_gives_zero_table() {
        let t = forward_rates(&[[0.9, 0.8]], &[[0.7, 0.6]], &single(ANTI), 0.0).unwrap();
        let c = t.cell(0, 0).unwrap();
        assert!(c.c.iter().flatten().chain(&c.a).chain(&c.b).all(|x| *x == 0.0));
    }

    #[test]
    fn hand_expansion() {
        let t = forward_rates(&[[0.9, 0.8]], &[[0.7, 0.6]], &single(ANTI), 100.0).unwrap();
        let c = t.cell(0, 0).unwrap();
        assert!((c.c[0][1] - 100.0 * 0.9 * 0.6 * 0.48).abs() < 1e-12);
        assert!((c.a[1] - 100.0 * 0.8 * 0.5).abs() < 1e-12);
        assert!((c.b[0] - 100.0 * 0.7 * 0.49).abs() < 1e-12);
    }

    #[test]
    fn inversion_recovers_efficiencies() {
        let t = forward_rates(&[[0.9, 0.8]], &[[0.7, 0.6]], &single(ANTI), 1e5).unwrap();
        let (bp, bm) = bob_efficiencies(&t, 0, 0).unwrap();
        assert!((bp - 0.7).abs() < 1e-12 && (bm - 0.6).abs() < 1e-12);
        let (ap, am) = alice_efficiencies(&t, 0, 0).unwrap();
        assert!((ap - 0.9).abs() < 1e-12 && (am - 0.8).abs() < 1e-12);
        assert!((bob_ratio(&t, 0).unwrap() - 7.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn correlated_lossless_gives_unity() {
        let t = forward_rates(&[[1.0; 2]], &[[1.0; 2]], &single([[0.5, 0.0], [0.0, 0.5]]), 1e4).unwrap();
        let (bp, bm) = bob_efficiencies(&t, 0, 0).unwrap();
        assert!((bp - 1.0).abs() < 1e-12 && (bm - 1.0).abs() < 1e-12);
        assert!((bob_ratio(&t, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uncorrelated_outcomes_are_ill_conditioned() {
        let t = forward_rates(&[[0.9, 0.8]], &[[0.7, 0.6]], &single([[0.25; 2]; 2]), 1e5).unwrap();
        assert!(matches!(bob_efficiencies(&t, 0, 0), Err(Error::IllConditioned { .. })));
        assert!(matches!(alice_efficiencies(&t, 0, 0), Err(Error::IllConditioned { .. })));
        assert!(matches!(bob_ratio(&t, 0), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn ratio_ignores_bob_singles() {
        let t = forward_rates(&[[0.9, 0.8]], &[[0.7, 0.6]], &single(ANTI), 1e5).unwrap();
        let mut u = t.clone();
        u.cells.get_mut(&(0, 0)).unwrap().b = [1.0, 2.0];
        assert_eq!(bob_ratio(&t, 0).unwrap(), bob_ratio(&u, 0).unwrap());
    }

    #[test]
    fn propagated_error_matches_resampling() {
        let mut t = forward_rates(&[[0.8, 0.8]], &[[0.8, 0.7]], &single(ANTI), 2e4).unwrap();
        t.duration = Some(300.0);
        let a = bob_ratio_with_error(&t, 0).unwrap();
        let b = bob_ratio_resampled(&t, 0, 4000, 11).unwrap();
        assert!((a.std_error / b.std_error - 1.0).abs() < 0.1, "{a:?} vs {b:?}");
        assert!((a.ratio - b.ratio).abs() < 3.0 * a.std_error / 40.0 + 1e-4);
    }

    #[test]
    fn allan_examples() {
        assert_eq!(allan_deviation(&[3.0; 10], 2).unwrap(), 0.0);
        let alt: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        assert!((allan_deviation(&alt, 1).unwrap() - 0.5 * 2f64.sqrt()).abs() < 1e-15);
        assert!(allan_deviation(&[1.0, 2.0, 3.0], 2).is_err());
        assert!(allan_deviation(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn conservative_policy() {
        let w = [
            RatioEstimate { ratio: 1.15, std_error: 0.001 },
            RatioEstimate { ratio: 1.14, std_error: 0.002 },
        ];
        let v = conservative_ratio(&w, 0.02, 5.0).unwrap();
        assert!((v - (1.14 * 0.98 - 0.01)).abs() < 1e-12);
        assert!(conservative_ratio(&[], 0.02, 5.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut t = forward_rates(&[[0.9, 0.8]], &[[0.7, 0.6]], &single(ANTI), 1e5).unwrap();
        t.duration = Some(60.0);
        let mut buf = Vec::new();
        write_rates_csv(&mut buf, &t).unwrap();
        let back = read_rates_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert!(read_rates_csv("kind,k,j,a,b,rate\nQ,0,0,+,+,1\n".as_bytes()).is_err());
        assert!(read_rates_csv("kind,k,j,a,b,rate\nC,0,0,x,+,1\n".as_bytes()).is_err());
    }
}
