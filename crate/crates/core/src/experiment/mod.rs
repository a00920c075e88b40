//! Photon-counting trials on a lossy Werner state and the experimental
//! steering test.
//!
//! Alice's outcome labels are flipped relative to the singlet so that
//! matched settings correlate: with Werner fraction `μ` and axes `u_k`
//! (Alice) and `v_j` (Bob), photons leave with outcomes distributed as
//! `P(a, b) = ¼(1 + a·b·μ·u_k·v_j)`. Each photon then clicks its outcome's
//! detector with that detector's efficiency, and every detector may also
//! fire on a dark count. Alice records `0` for no click or a double click;
//! Bob discards trials without a click and picks a random outcome on a
//! double click.

mod estimate;

use std::collections::BTreeMap;
use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::BlochVector;
use crate::error::{Error, Result};

pub use estimate::{bootstrap_std_error, estimate, ResidualReport, SettingEstimate};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Trials simulated per independently seeded block.
pub const BLOCK_TRIALS: u64 = 1 << 16;

/// Alice's recorded outcome index: `+1`, `0`, `−1`.
pub const ALICE_OUTCOMES: [i8; 3] = [1, 0, -1];

/// Bob's recorded outcome, with `None` for no detection.
pub const BOB_OUTCOMES: [Option<i8>; 3] = [Some(1), Some(-1), None];

/// Which setting pairs receive trials.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairSelection {
    /// Every `(k, j)`.
    #[default]
    All,
    /// Only `k = j`, the only trials the inequality uses.
    Matched,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Werner singlet fraction.
    pub mu: f64,
    /// Alice's axes, labelled so that her outcomes correlate with Bob's.
    pub alice_axes: Vec<BlochVector>,
    pub bob_axes: Vec<BlochVector>,
    /// `[+, −]` detector efficiencies per Alice setting.
    pub alice_eff: Vec<[f64; 2]>,
    /// `[+, −]` detector efficiencies per Bob setting.
    pub bob_eff: Vec<[f64; 2]>,
    pub trials_per_pair: u64,
    #[serde(default)]
    pub pairs: PairSelection,
    /// Dark-count probability per detector per trial.
    #[serde(default)]
    pub dark_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Matched axes on both sides, uniform efficiencies.
    pub fn uniform(mu: f64, axes: Vec<BlochVector>, eta_a: f64, eta_b: f64, trials_per_pair: u64) -> Self {
        let n = axes.len();
        ExperimentConfig {
            mu,
            alice_axes: axes.clone(),
            bob_axes: axes,
            alice_eff: vec![[eta_a; 2]; n],
            bob_eff: vec![[eta_b; 2]; n],
            trials_per_pair,
            pairs: PairSelection::All,
            dark_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |x: f64, what: &str| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} must lie in [0, 1], got {x}")))
            }
        };
        prob(self.mu, "Werner fraction")?;
        prob(self.dark_prob, "dark-count probability")?;
        let n = self.bob_axes.len();
        if n == 0 || self.alice_axes.len() != n || self.alice_eff.len() != n || self.bob_eff.len() != n {
            return Err(Error::invalid(
                "axes and efficiencies must be given for the same non-zero number of settings",
            ));
        }
        for (i, a) in self.alice_axes.iter().chain(&self.bob_axes).enumerate() {
            a.require_unit(&format!("axis {}", i % n + 1))?;
        }
        for e in self.alice_eff.iter().chain(&self.bob_eff).flatten() {
            prob(*e, "detector efficiency")?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.bob_axes.len()
    }

    fn selected_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        match self.pairs {
            PairSelection::All => (0..n).flat_map(|k| (0..n).map(move |j| (k, j))).collect(),
            PairSelection::Matched => (0..n).map(|j| (j, j)).collect(),
        }
    }
}

/// Probabilities `p[a][b]` indexed by [`ALICE_OUTCOMES`] × [`BOB_OUTCOMES`].
pub type JointDistribution = [[f64; 3]; 3];

fn alice_record(plus: bool, minus: bool) -> usize {
    match (plus, minus) {
        (true, false) => 0,
        (false, true) => 2,
        _ => 1,
    }
}

/// Exact outcome law for setting pair `(k, j)` (zero-based).
pub fn joint_outcome_distribution(config: &ExperimentConfig, k: usize, j: usize) -> Result<JointDistribution> {
    config.validate()?;
    if k >= config.n() || j >= config.n() {
        return Err(Error::invalid(format!("setting pair ({k}, {j}) out of range")));
    }
    let c = config.mu * config.alice_axes[k].dot(config.bob_axes[j]);
    let (al, be, q) = (config.alice_eff[k], config.bob_eff[j], config.dark_prob);
    let mut out = [[0.0; 3]; 3];
    for (pa, sa) in [(0usize, 1.0), (1, -1.0)] {
        for (pb, sb) in [(0usize, 1.0), (1, -1.0)] {
            let p_photons = 0.25 * (1.0 + sa * sb * c);
            // Click probability of each detector: A+, A−, B+, B−.
            let mut click = [q; 4];
            click[pa] = 1.0 - (1.0 - al[pa]) * (1.0 - q);
            click[2 + pb] = 1.0 - (1.0 - be[pb]) * (1.0 - q);
            for mask in 0..16usize {
                let p_mask: f64 = (0..4)
                    .map(|d| if mask >> d & 1 == 1 { click[d] } else { 1.0 - click[d] })
                    .product();
                let a = alice_record(mask & 1 != 0, mask & 2 != 0);
                let weight = p_photons * p_mask;
                match (mask & 4 != 0, mask & 8 != 0) {
                    (false, false) => out[a][2] += weight,
                    (true, false) => out[a][0] += weight,
                    (false, true) => out[a][1] += weight,
                    (true, true) => {
                        out[a][0] += 0.5 * weight;
                        out[a][1] += 0.5 * weight;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Event counts `N[a][b]` per setting pair, indexed like [`JointDistribution`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialCounts {
    pub cells: BTreeMap<(usize, usize), [[u64; 3]; 3]>,
}

impl TrialCounts {
    pub fn get(&self, k: usize, j: usize) -> Option<&[[u64; 3]; 3]> {
        self.cells.get(&(k, j))
    }

    pub fn total(&self) -> u64 {
        self.cells.values().flatten().flatten().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Counts with `+1 ↔ −1` swapped for both parties.
    pub fn relabeled(&self) -> TrialCounts {
        let swap = |i: usize| match i {
            0 => 2,
            2 => 0,
            x => x,
        };
        let swap_b = |i: usize| match i {
            0 => 1,
            1 => 0,
            x => x,
        };
        let mut out = TrialCounts::default();
        for (key, n) in &self.cells {
            let mut m = [[0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    m[swap(a)][swap_b(b)] = n[a][b];
                }
            }
            out.cells.insert(*key, m);
        }
        out
    }
}

/// Samples one trial's recorded outcome indices.
fn sample_trial<R: Rng>(rng: &mut R, c: f64, al: [f64; 2], be: [f64; 2], q: f64) -> (usize, usize) {
    let pa = usize::from(rng.random::<bool>());
    // Bob's photon agrees with Alice's with probability (1 + c)/2.
    let agree = rng.random::<f64>() < 0.5 * (1.0 + c);
    let pb = if agree { pa } else { 1 - pa };
    let mut click = [false; 4];
    click[pa] = rng.random::<f64>() < al[pa];
    click[2 + pb] = rng.random::<f64>() < be[pb];
    if q > 0.0 {
        for d in &mut click {
            *d |= rng.random::<f64>() < q;
        }
    }
    let a = alice_record(click[0], click[1]);
    let b = match (click[2], click[3]) {
        (false, false) => 2,
        (true, false) => 0,
        (false, true) => 1,
        (true, true) => usize::from(rng.random::<bool>()),
    };
    (a, b)
}

/// Deterministic RNG for one block of one setting pair.
fn block_rng(seed: u64, pair: usize, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((pair as u64) << 40) | block);
    rng
}

/// Runs `trials_per_pair` trials on every selected setting pair.
///
/// Trials are split into blocks with their own seeded streams, so the
/// result depends only on the configuration, not on thread scheduling.
pub fn simulate(config: &ExperimentConfig) -> Result<TrialCounts> {
    config.validate()?;
    let mut counts = TrialCounts::default();
    if config.trials_per_pair == 0 {
        return Ok(counts);
    }
    for (pair, (k, j)) in config.selected_pairs().into_iter().enumerate() {
        let c = config.mu * config.alice_axes[k].dot(config.bob_axes[j]);
        let (al, be, q) = (config.alice_eff[k], config.bob_eff[j], config.dark_prob);
        let blocks = config.trials_per_pair.div_ceil(BLOCK_TRIALS);
        let cell = (0..blocks)
            .into_par_iter()
            .map(|block| {
                let mut rng = block_rng(config.seed, pair, block);
                let len = BLOCK_TRIALS.min(config.trials_per_pair - block * BLOCK_TRIALS);
                let mut n = [[0u64; 3]; 3];
                for _ in 0..len {
                    let (a, b) = sample_trial(&mut rng, c, al, be, q);
                    n[a][b] += 1;
                }
                n
            })
            .reduce(
                || [[0; 3]; 3],
                |mut x, y| {
                    for a in 0..3 {
                        for b in 0..3 {
                            x[a][b] += y[a][b];
                        }
                    }
                    x
                },
            );
        counts.cells.insert((k, j), cell);
    }
    Ok(counts)
}

#[derive(Deserialize)]
struct CountRow {
    k: usize,
    j: usize,
    a: i8,
    b: i8,
    #[serde(rename = "N")]
    n: u64,
}

/// Reads counts from CSV with columns `k,j,a,b,N`; settings are 1-based,
/// `a ∈ {1, 0, −1}` and `b ∈ {1, −1}` with `b = 0` for no detection.
pub fn read_counts_csv<R: Read>(reader: R) -> Result<TrialCounts> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut counts = TrialCounts::default();
    for row in rdr.deserialize::<CountRow>() {
        let row = row?;
        if row.k == 0 || row.j == 0 {
            return Err(Error::Parse("settings are numbered from 1".into()));
        }
        let a = match row.a {
            1 => 0,
            0 => 1,
            -1 => 2,
            x => return Err(Error::Parse(format!("Alice outcome must be 1, 0 or -1, got {x}"))),
        };
        let b = match row.b {
            1 => 0,
            -1 => 1,
            0 => 2,
            x => return Err(Error::Parse(format!("Bob outcome must be 1, -1 or 0, got {x}"))),
        };
        counts.cells.entry((row.k - 1, row.j - 1)).or_insert([[0; 3]; 3])[a][b] += row.n;
    }
    Ok(counts)
}

pub fn write_counts_csv<W: std::io::Write>(writer: W, counts: &TrialCounts) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "j", "a", "b", "N"])?;
    for (&(k, j), n) in &counts.cells {
        for (ai, a) in ALICE_OUTCOMES.iter().enumerate() {
            for (bi, b) in BOB_OUTCOMES.iter().enumerate() {
                w.write_record([
                    (k + 1).to_string(),
                    (j + 1).to_string(),
                    a.to_string(),
                    b.unwrap_or(0).to_string(),
                    n[ai][bi].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Straight-line speed a signal would need to cover `distance_m` in `time_s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpacetimeBound {
    pub distance_m: f64,
    pub time_s: f64,
    pub speed_m_per_s: f64,
    /// Speed in units of the vacuum speed of light.
    pub speed_over_c: f64,
}

pub fn ftl_speed(distance_m: f64, time_s: f64) -> Result<SpacetimeBound> {
    if !(time_s > 0.0 && time_s.is_finite()) {
        return Err(Error::invalid(format!("time must be positive, got {time_s}")));
    }
    if !(distance_m >= 0.0 && distance_m.is_finite()) {
        return Err(Error::invalid(format!("distance must be >= 0, got {distance_m}")));
    }
    let speed = distance_m / time_s;
    Ok(SpacetimeBound {
        distance_m,
        time_s,
        speed_m_per_s: speed,
        speed_over_c: speed / SPEED_OF_LIGHT,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal(mu: f64, eta_a: f64) -> ExperimentConfig {
        ExperimentConfig::uniform(mu, vec![BlochVector::Z, BlochVector::X, BlochVector::Y], eta_a, 1.0, 0)
    }

    #[test]
    fn perfect_correlation() {
        let p = joint_outcome_distribution(&ideal(1.0, 1.0), 0, 0).unwrap();
        assert!((p[0][0] - 0.5).abs() < 1e-15 && (p[2][1] - 0.5).abs() < 1e-15);
        assert!(p.iter().flatten().map(|x| x.abs()).sum::<f64>() - 1.0 < 1e-15);
    }

    #[test]
    fn maximally_mixed_is_uniform() {
        let p = joint_outcome_distribution(&ideal(0.0, 1.0), 1, 1).unwrap();
        for (a, b) in [(0, 0), (0, 1), (2, 0), (2, 1)] {
            assert!((p[a][b] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn heralding_loss() {
        let p = joint_outcome_distribution(&ideal(1.0, 0.748), 2, 2).unwrap();
        let detected: f64 = p.iter().map(|row| row[0] + row[1]).sum();
        assert!(((p[1][0] + p[1][1]) / detected - 0.252).abs() < 1e-12);
    }

    #[test]
    fn dark_counts_keep_normalization() {
        let mut cfg = ideal(0.9, 0.7);
        cfg.dark_prob = 0.05;
        cfg.bob_eff = vec![[0.8, 0.6]; 3];
        let p = joint_outcome_distribution(&cfg, 0, 1).unwrap();
        assert!((p.iter().flatten().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simulation_is_deterministic_and_sized() {
        let mut cfg = ideal(0.95, 0.8);
        cfg.trials_per_pair = 100_000;
        cfg.dark_prob = 0.01;
        cfg.seed = 7;
        let a = simulate(&cfg).unwrap();
        assert_eq!(a, simulate(&cfg).unwrap());
        assert_eq!(a.cells.len(), 9);
        assert!(a.cells.values().all(|n| n.iter().flatten().sum::<u64>() == 100_000));
        cfg.seed = 8;
        assert_ne!(a, simulate(&cfg).unwrap());
    }

    #[test]
    fn empty_simulation() {
        assert!(simulate(&ideal(1.0, 1.0)).unwrap().is_empty());
    }

    #[test]
    fn sampling_matches_analytic_law() {
        let mut cfg = ideal(0.8, 0.7);
        cfg.bob_eff = vec![[0.9, 0.6]; 3];
        cfg.dark_prob = 0.02;
        cfg.trials_per_pair = 400_000;
        cfg.pairs = PairSelection::Matched;
        let counts = simulate(&cfg).unwrap();
        let n = counts.get(0, 0).unwrap();
        let p = joint_outcome_distribution(&cfg, 0, 0).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let expected = p[a][b] * 400_000.0;
                let sd = expected.sqrt().max(1.0);
                assert!((n[a][b] as f64 - expected).abs() < 5.0 * sd, "{a},{b}: {} vs {expected}", n[a][b]);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut cfg = ideal(0.9, 0.8);
        cfg.trials_per_pair = 1000;
        let counts = simulate(&cfg).unwrap();
        let mut buf = Vec::new();
        write_counts_csv(&mut buf, &counts).unwrap();
        assert_eq!(read_counts_csv(buf.as_slice()).unwrap(), counts);
        assert!(read_counts_csv("k,j,a,b,N\n1,1,2,1,5\n".as_bytes()).is_err());
        assert!(read_counts_csv("k,j,a,b,N\n0,1,1,1,5\n".as_bytes()).is_err());
    }

    #[test]
    fn ftl_examples() {
        assert!((ftl_speed(SPEED_OF_LIGHT, 1.0).unwrap().speed_over_c - 1.0).abs() < 1e-15);
        let b = ftl_speed(161.3, 230e-9).unwrap();
        assert!((b.speed_m_per_s - 7.013e8).abs() < 1e5);
        assert!((b.speed_over_c - 2.34).abs() < 0.01);
        assert_eq!(ftl_speed(0.0, 1.0).unwrap().speed_m_per_s, 0.0);
        assert!(ftl_speed(1.0, 0.0).is_err());
        assert!(ftl_speed(1.0, -1.0).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = ideal(1.2, 0.8);
        assert!(cfg.validate().is_err());
        cfg.mu = 0.9;
        cfg.alice_eff.pop();
        assert!(cfg.validate().is_err());
    }
}
