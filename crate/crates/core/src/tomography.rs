//! Measurement-axis tomography.
//!
//! Known probe states `s_i` are sent into one of Bob's settings and the
//! `+` outcome coincidences are counted. With a lossy projective model the
//! expected count is `scale · trials · (1 + e·s_i)/2`, so the unit axis `e`
//! is fitted by Poisson maximum likelihood with the scale profiled out.
//! Uncertainties come from a bootstrap that resamples probes, perturbs the
//! preparation waveplates within their tolerances and redraws the counts.

use std::collections::BTreeMap;
use std::io::Read;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::optics::{Direction, OpticalPipeline, OpticalStage, POLARIZER_OUTPUT};
use crate::bloch::BlochVector;
use crate::error::{Error, Result};

/// Fits stop once an iteration improves the log-likelihood by less than this.
pub const LOGLIK_TOL: f64 = 1e-10;

/// Smallest eigenvalue of the probe second-moment matrix for a usable design.
pub const MIN_DESIGN_EIGENVALUE: f64 = 1e-6;

/// Largest fraction of bootstrap fits allowed to fail.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

const MAX_ITERATIONS: usize = 200;

/// Nominal probe polarizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InputLabel {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl InputLabel {
    pub const ALL: [InputLabel; 6] = [
        InputLabel::H,
        InputLabel::V,
        InputLabel::D,
        InputLabel::A,
        InputLabel::R,
        InputLabel::L,
    ];

    /// Ideal Bloch vector (`|V⟩ = +z`, `|D⟩ = +x`, `|L⟩ = +y`).
    pub fn bloch(self) -> BlochVector {
        match self {
            InputLabel::H => -BlochVector::Z,
            InputLabel::V => BlochVector::Z,
            InputLabel::D => BlochVector::X,
            InputLabel::A => -BlochVector::X,
            InputLabel::L => BlochVector::Y,
            InputLabel::R => -BlochVector::Y,
        }
    }

    /// Nominal (HWP, QWP) angles in degrees behind a horizontal polarizer.
    pub fn waveplate_angles(self) -> (f64, f64) {
        match self {
            InputLabel::H => (0.0, 0.0),
            InputLabel::V => (45.0, 0.0),
            InputLabel::D => (22.5, 45.0),
            InputLabel::A => (-22.5, -45.0),
            InputLabel::L => (0.0, 45.0),
            InputLabel::R => (0.0, -45.0),
        }
    }
}

impl FromStr for InputLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "H" => Ok(InputLabel::H),
            "V" => Ok(InputLabel::V),
            "D" => Ok(InputLabel::D),
            "A" => Ok(InputLabel::A),
            "R" => Ok(InputLabel::R),
            "L" => Ok(InputLabel::L),
            other => Err(Error::Parse(format!("unknown input label '{other}'"))),
        }
    }
}

/// One probe measurement of one setting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRecord {
    pub label: InputLabel,
    /// Prepared input state; the nominal state unless perturbed.
    pub input: BlochVector,
    pub setting: usize,
    pub counts: u64,
    pub trials: u64,
}

impl ProbeRecord {
    pub fn new(label: InputLabel, setting: usize, counts: u64, trials: u64) -> Result<Self> {
        if counts > trials {
            return Err(Error::invalid(format!("{counts} counts exceed {trials} trials")));
        }
        Ok(ProbeRecord { label, input: label.bloch(), setting, counts, trials })
    }
}

/// Tolerances of the preparation waveplates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveplateTolerances {
    /// Half-width of the uniform retardance error, in waves.
    pub retardance_waves: f64,
    /// Standard deviation of the zero-angle error, in degrees.
    pub zero_angle_deg: f64,
}

impl Default for WaveplateTolerances {
    fn default() -> Self {
        WaveplateTolerances { retardance_waves: 0.005, zero_angle_deg: 0.1 }
    }
}

impl WaveplateTolerances {
    pub const NONE: WaveplateTolerances =
        WaveplateTolerances { retardance_waves: 0.0, zero_angle_deg: 0.0 };

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<WaveplateErrors> {
        if !(self.retardance_waves >= 0.0 && self.zero_angle_deg >= 0.0) {
            return Err(Error::invalid("waveplate tolerances must be >= 0"));
        }
        let normal = Normal::new(0.0, self.zero_angle_deg)
            .map_err(|e| Error::invalid(format!("zero-angle tolerance: {e}")))?;
        let retardance = |rng: &mut R| {
            if self.retardance_waves > 0.0 {
                rng.random_range(-self.retardance_waves..=self.retardance_waves)
            } else {
                0.0
            }
        };
        Ok(WaveplateErrors {
            hwp_retardance_waves: retardance(rng),
            qwp_retardance_waves: retardance(rng),
            hwp_zero_deg: normal.sample(rng),
            qwp_zero_deg: normal.sample(rng),
        })
    }
}

/// One realization of the preparation waveplate errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct WaveplateErrors {
    pub hwp_retardance_waves: f64,
    pub qwp_retardance_waves: f64,
    pub hwp_zero_deg: f64,
    pub qwp_zero_deg: f64,
}

/// State produced for `label` by waveplates carrying `errors`.
pub fn prepare_input(label: InputLabel, errors: &WaveplateErrors) -> BlochVector {
    let (hwp, qwp) = label.waveplate_angles();
    let pipeline = OpticalPipeline::new(
        vec![
            OpticalStage::half_wave(hwp + errors.hwp_zero_deg)
                .with_retardance_error(errors.hwp_retardance_waves),
            OpticalStage::quarter_wave(qwp + errors.qwp_zero_deg)
                .with_retardance_error(errors.qwp_retardance_waves),
        ],
        Direction::Forward,
    );
    pipeline
        .propagate(POLARIZER_OUTPUT, 1)
        .expect("waveplate propagation of a pure state is valid")
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

/// Recomputes every input through one shared draw of waveplate errors and
/// redraws each count from a Poisson law with the recorded count as mean.
pub fn parametric_resample<R: Rng + ?Sized>(
    probes: &[ProbeRecord],
    tolerances: &WaveplateTolerances,
    rng: &mut R,
) -> Result<Vec<ProbeRecord>> {
    let errors = tolerances.sample(rng)?;
    Ok(probes
        .iter()
        .map(|p| ProbeRecord {
            input: prepare_input(p.label, &errors),
            counts: poisson(p.counts as f64, rng).min(p.trials),
            ..p.clone()
        })
        .collect())
}

/// Maximum-likelihood axis and count scale for one setting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AxisFit {
    pub axis: BlochVector,
    pub scale: f64,
    /// Poisson log-likelihood (without the `ln k!` terms) at the fit.
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// Poisson log-likelihood of the probes, dropping `ln k!`.
pub fn log_likelihood(probes: &[ProbeRecord], axis: BlochVector, scale: f64) -> f64 {
    probes
        .iter()
        .map(|p| {
            let lambda = scale * p.trials as f64 * 0.5 * (1.0 + axis.dot(p.input));
            let k = p.counts as f64;
            if lambda <= 0.0 {
                if k > 0.0 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            } else {
                k * lambda.ln() - lambda
            }
        })
        .sum()
}

/// Likelihood with the scale maximized out: `Σ k ln p − K ln W`.
struct Profile {
    s: Vec<BlochVector>,
    k: Vec<f64>,
    w: Vec<f64>,
    total: f64,
}

type Mat3 = [[f64; 3]; 3];

impl Profile {
    fn prob(e: BlochVector, s: BlochVector) -> f64 {
        0.5 * (1.0 + e.dot(s))
    }

    fn weight(&self, e: BlochVector) -> f64 {
        self.s.iter().zip(&self.w).map(|(s, w)| w * Self::prob(e, *s)).sum()
    }

    fn value(&self, e: BlochVector) -> f64 {
        let mut v = -self.total * self.weight(e).ln();
        for (s, k) in self.s.iter().zip(&self.k) {
            if *k > 0.0 {
                let p = Self::prob(e, *s);
                if p <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                v += k * p.ln();
            }
        }
        v
    }

    /// Euclidean gradient and Hessian in `e`.
    fn derivatives(&self, e: BlochVector) -> (BlochVector, Mat3) {
        let mut g = BlochVector::ZERO;
        let mut h = [[0.0; 3]; 3];
        let mut ws = BlochVector::ZERO;
        for ((s, k), w) in self.s.iter().zip(&self.k).zip(&self.w) {
            ws += *s * (0.5 * w);
            if *k > 0.0 {
                let p = Self::prob(e, *s);
                g += *s * (0.5 * k / p);
                let c = 0.25 * k / (p * p);
                let sa = s.to_array();
                for (a, row) in h.iter_mut().enumerate() {
                    for (b, x) in row.iter_mut().enumerate() {
                        *x -= c * sa[a] * sa[b];
                    }
                }
            }
        }
        let big_w = self.weight(e);
        g += ws * (-self.total / big_w);
        let wa = ws.to_array();
        let c = self.total / (big_w * big_w);
        for (a, row) in h.iter_mut().enumerate() {
            for (b, x) in row.iter_mut().enumerate() {
                *x += c * wa[a] * wa[b];
            }
        }
        (g, h)
    }
}

fn quad(m: &Mat3, u: BlochVector, v: BlochVector) -> f64 {
    let (u, v) = (u.to_array(), v.to_array());
    (0..3).map(|a| (0..3).map(|b| u[a] * m[a][b] * v[b]).sum::<f64>()).sum()
}

/// Orthonormal basis of the tangent plane at unit `e`.
pub fn tangent_basis(e: BlochVector) -> (BlochVector, BlochVector) {
    let a = e.to_array();
    let helper = if a[0].abs() <= a[1].abs() && a[0].abs() <= a[2].abs() {
        BlochVector::X
    } else if a[1].abs() <= a[2].abs() {
        BlochVector::Y
    } else {
        BlochVector::Z
    };
    let t1 = e.cross(helper).normalized().expect("helper axis is not parallel to e");
    (t1, e.cross(t1))
}

/// Eigenvalues of a symmetric 3×3 matrix, ascending.
fn sym3_eigenvalues(m: &Mat3) -> [f64; 3] {
    let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 == 0.0 {
        let mut d = [m[0][0], m[1][1], m[2][2]];
        d.sort_by(f64::total_cmp);
        return d;
    }
    let p2 = (0..3).map(|i| (m[i][i] - q).powi(2)).sum::<f64>() + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = *m;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (*x - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [lo, 3.0 * q - hi - lo, hi]
}

fn check_design(probes: &[ProbeRecord]) -> Result<Profile> {
    let used: Vec<&ProbeRecord> = probes.iter().filter(|p| p.trials > 0).collect();
    if used.len() < 4 {
        return Err(Error::IllPosedFit(format!(
            "need at least 4 probes with trials, got {}",
            used.len()
        )));
    }
    let mut m = [[0.0; 3]; 3];
    for p in &used {
        let s = p.input.to_array();
        for (a, row) in m.iter_mut().enumerate() {
            for (b, x) in row.iter_mut().enumerate() {
                *x += s[a] * s[b] / used.len() as f64;
            }
        }
    }
    let lo = sym3_eigenvalues(&m)[0];
    if lo < MIN_DESIGN_EIGENVALUE {
        return Err(Error::IllPosedFit(format!(
            "probe states do not span the sphere (smallest design eigenvalue {lo:.3e})"
        )));
    }
    let total: f64 = used.iter().map(|p| p.counts as f64).sum();
    if total == 0.0 {
        return Err(Error::IllPosedFit("no counts recorded".into()));
    }
    Ok(Profile {
        s: used.iter().map(|p| p.input).collect(),
        k: used.iter().map(|p| p.counts as f64).collect(),
        w: used.iter().map(|p| p.trials as f64).collect(),
        total,
    })
}

/// Riemannian Newton ascent on the sphere with a gradient fallback where the
/// Hessian is not negative definite, and backtracking on every step.
fn ascend(profile: &Profile, start: BlochVector) -> (BlochVector, f64, usize) {
    let mut e = start;
    let mut value = profile.value(e);
    for iter in 1..=MAX_ITERATIONS {
        let (g, h) = profile.derivatives(e);
        let (t1, t2) = tangent_basis(e);
        let (g1, g2) = (g.dot(t1), g.dot(t2));
        let radial = g.dot(e);
        let (a, b, d) = (quad(&h, t1, t1) - radial, quad(&h, t1, t2), quad(&h, t2, t2) - radial);
        let det = a * d - b * b;
        let (mut s1, mut s2) = if a < 0.0 && det > 0.0 {
            (-(d * g1 - b * g2) / det, -(a * g2 - b * g1) / det)
        } else {
            let scale = (a.abs() + d.abs() + 2.0 * b.abs()).max(1e-300);
            (g1 / scale, g2 / scale)
        };
        let len = s1.hypot(s2);
        if len > 0.5 {
            s1 *= 0.5 / len;
            s2 *= 0.5 / len;
        }
        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..60 {
            if let Some(next) = (e + t1 * (t * s1) + t2 * (t * s2)).normalized() {
                let v = profile.value(next);
                if v > value || (v == value && t == 1.0) {
                    accepted = Some((next, v));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next, v)) = accepted else {
            return (e, value, iter);
        };
        let gain = v - value;
        e = next;
        value = v;
        if gain < LOGLIK_TOL {
            return (e, value, iter);
        }
    }
    (e, value, MAX_ITERATIONS)
}

/// Fits one unit axis to all given probes (callers pass one setting's data).
///
/// Starts from a moment estimate and the six canonical directions; the
/// best converged start wins, earlier starts winning exact ties.
pub fn fit_measurement_axis(probes: &[ProbeRecord]) -> Result<AxisFit> {
    let profile = check_design(probes)?;
    let mean_rate = profile.k.iter().zip(&profile.w).map(|(k, w)| k / w).sum::<f64>()
        / profile.k.len() as f64;
    let moment: BlochVector = profile
        .s
        .iter()
        .zip(profile.k.iter().zip(&profile.w))
        .map(|(s, (k, w))| *s * (k / w - mean_rate))
        .sum();
    let mut starts: Vec<BlochVector> = moment.normalized().into_iter().collect();
    for v in [BlochVector::X, BlochVector::Y, BlochVector::Z] {
        starts.push(v);
        starts.push(-v);
    }

    let mut best: Option<(BlochVector, f64, usize)> = None;
    for start in starts {
        if !profile.value(start).is_finite() {
            continue;
        }
        let (e, v, it) = ascend(&profile, start);
        if best.is_none_or(|(_, bv, _)| v > bv + LOGLIK_TOL) {
            best = Some((e, v, it));
        }
    }
    let (axis, _, iterations) = best.ok_or_else(|| {
        Error::IllPosedFit("no starting direction has finite likelihood".into())
    })?;
    let scale = profile.total / profile.weight(axis);
    Ok(AxisFit { axis, scale, log_likelihood: log_likelihood(probes, axis, scale), iterations })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub tolerances: WaveplateTolerances,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { trials: 10_000, seed: 0, tolerances: WaveplateTolerances::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TomographyEstimate {
    pub setting: usize,
    /// Normalized mean of the bootstrap axes.
    pub axis: BlochVector,
    /// Angular spread along the semi-major axis of the displacement
    /// ellipse, radians.
    pub sigma: f64,
    /// Angular spread along the semi-minor axis, radians.
    pub sigma_minor: f64,
    pub samples: usize,
    pub failures: usize,
}

/// Log map at `base`: the tangent vector pointing to `v` whose length is
/// the angle between them, in the `(t1, t2)` basis.
fn log_map(base: BlochVector, v: BlochVector, basis: (BlochVector, BlochVector)) -> (f64, f64) {
    let angle = base.angle_to(v);
    let Some(dir) = (v - base * base.dot(v)).normalized() else {
        return (0.0, 0.0);
    };
    (angle * dir.dot(basis.0), angle * dir.dot(basis.1))
}

/// Mean direction and (major, minor) angular spread of a cloud of axes.
pub fn angular_spread(axes: &[BlochVector]) -> Result<(BlochVector, f64, f64)> {
    if axes.len() < 2 {
        return Err(Error::InsufficientData("need at least two axes for a spread".into()));
    }
    let mean = axes
        .iter()
        .copied()
        .sum::<BlochVector>()
        .normalized()
        .ok_or_else(|| Error::DegenerateGeometry("axes average to zero".into()))?;
    let basis = tangent_basis(mean);
    let pts: Vec<(f64, f64)> = axes.iter().map(|a| log_map(mean, *a, basis)).collect();
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p.0 / n, y + p.1 / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pts {
        sxx += (x - mx).powi(2);
        sxy += (x - mx) * (y - my);
        syy += (y - my).powi(2);
    }
    let (sxx, sxy, syy) = (sxx / (n - 1.0), sxy / (n - 1.0), syy / (n - 1.0));
    let half_trace = 0.5 * (sxx + syy);
    let disc = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
    Ok((mean, (half_trace + disc).sqrt(), (half_trace - disc).max(0.0).sqrt()))
}

/// Deterministic RNG for bootstrap trial `trial` of `setting`.
pub fn trial_rng(seed: u64, setting: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((setting as u64) << 40) | trial as u64);
    rng
}

/// Bootstrap estimate for one setting's probes.
pub fn bootstrap_setting(
    probes: &[ProbeRecord],
    setting: usize,
    config: &BootstrapConfig,
) -> Result<TomographyEstimate> {
    if config.trials < 100 {
        return Err(Error::invalid(format!("need at least 100 bootstrap trials, got {}", config.trials)));
    }
    if probes.is_empty() {
        return Err(Error::InsufficientData(format!("no probes for setting {setting}")));
    }
    let fits: Vec<Option<BlochVector>> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(config.seed, setting, trial);
            let sample: Vec<ProbeRecord> = (0..probes.len())
                .map(|_| probes[rng.random_range(0..probes.len())].clone())
                .collect();
            let sample = parametric_resample(&sample, &config.tolerances, &mut rng).ok()?;
            fit_measurement_axis(&sample).ok().map(|f| f.axis)
        })
        .collect();
    let axes: Vec<BlochVector> = fits.iter().flatten().copied().collect();
    let failures = fits.len() - axes.len();
    if failures as f64 > MAX_FAILURE_FRACTION * config.trials as f64 {
        return Err(Error::IllPosedFit(format!(
            "{failures} of {} bootstrap fits failed for setting {setting}",
            config.trials
        )));
    }
    let (axis, sigma, sigma_minor) = angular_spread(&axes)?;
    Ok(TomographyEstimate { setting, axis, sigma, sigma_minor, samples: axes.len(), failures })
}

/// Bootstrap estimates for every setting present in `probes`, in setting order.
pub fn bootstrap_tomography(
    probes: &[ProbeRecord],
    config: &BootstrapConfig,
) -> Result<Vec<TomographyEstimate>> {
    group_by_setting(probes)
        .into_iter()
        .map(|(setting, group)| bootstrap_setting(&group, setting, config))
        .collect()
}

pub fn group_by_setting(probes: &[ProbeRecord]) -> BTreeMap<usize, Vec<ProbeRecord>> {
    let mut out: BTreeMap<usize, Vec<ProbeRecord>> = BTreeMap::new();
    for p in probes {
        out.entry(p.setting).or_default().push(p.clone());
    }
    out
}

/// Synthetic probe data: `repeats` probes of each label with Poisson counts
/// from the forward model.
pub fn simulate_probes<R: Rng + ?Sized>(
    axis: BlochVector,
    setting: usize,
    scale: f64,
    trials: u64,
    repeats: usize,
    rng: &mut R,
) -> Result<Vec<ProbeRecord>> {
    axis.require_unit("probe axis")?;
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::invalid(format!("count scale must lie in (0, 1], got {scale}")));
    }
    let mut out = Vec::with_capacity(6 * repeats);
    for _ in 0..repeats {
        for label in InputLabel::ALL {
            let mean = scale * trials as f64 * 0.5 * (1.0 + axis.dot(label.bloch()));
            out.push(ProbeRecord::new(label, setting, poisson(mean, rng).min(trials), trials)?);
        }
    }
    Ok(out)
}

/// Fisher-information angular standard deviations (major, minor) of the
/// axis estimate at the true parameters, scale treated as a nuisance.
pub fn fisher_sigma(probes: &[ProbeRecord], axis: BlochVector, scale: f64) -> Result<(f64, f64)> {
    let (t1, t2) = tangent_basis(axis);
    // Parameters: tangent displacements (u, v) and ln scale.
    let mut info = [[0.0; 3]; 3];
    for p in probes {
        let w = p.trials as f64;
        let prob = 0.5 * (1.0 + axis.dot(p.input));
        if prob <= 0.0 || w == 0.0 {
            continue;
        }
        let lambda = scale * w * prob;
        let grad = [
            scale * w * 0.5 * t1.dot(p.input),
            scale * w * 0.5 * t2.dot(p.input),
            lambda,
        ];
        for a in 0..3 {
            for b in 0..3 {
                info[a][b] += grad[a] * grad[b] / lambda;
            }
        }
    }
    // Schur complement removes the scale parameter.
    let c = info[2][2];
    if c <= 0.0 {
        return Err(Error::IllPosedFit("no expected counts".into()));
    }
    let a = info[0][0] - info[0][2] * info[2][0] / c;
    let b = info[0][1] - info[0][2] * info[2][1] / c;
    let d = info[1][1] - info[1][2] * info[2][1] / c;
    let det = a * d - b * b;
    if det <= 0.0 {
        return Err(Error::IllPosedFit("singular Fisher information".into()));
    }
    let (caa, cab, cdd) = (d / det, -b / det, a / det);
    let half = 0.5 * (caa + cdd);
    let disc = (0.25 * (caa - cdd).powi(2) + cab * cab).sqrt();
    Ok(((half + disc).sqrt(), (half - disc).max(0.0).sqrt()))
}

#[derive(Deserialize)]
struct ProbeRow {
    label: String,
    setting: usize,
    counts: u64,
    trials: u64,
}

/// Reads probes from CSV with columns `label,setting,counts,trials`; lines
/// starting with `#` are comments.
pub fn read_probes_csv<R: Read>(reader: R) -> Result<Vec<ProbeRecord>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<ProbeRow>() {
        let row = row?;
        out.push(ProbeRecord::new(row.label.parse()?, row.setting, row.counts, row.trials)?);
    }
    Ok(out)
}

pub fn write_probes_csv<W: std::io::Write>(writer: W, probes: &[ProbeRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["label", "setting", "counts", "trials"])?;
    for p in probes {
        wtr.write_record([
            format!("{:?}", p.label),
            p.setting.to_string(),
            p.counts.to_string(),
            p.trials.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless(axis: BlochVector, scale: f64, trials: u64) -> Vec<ProbeRecord> {
        InputLabel::ALL
            .iter()
            .map(|&l| {
                let k = (scale * trials as f64 * 0.5 * (1.0 + axis.dot(l.bloch()))).round() as u64;
                ProbeRecord::new(l, 1, k, trials).unwrap()
            })
            .collect()
    }

    #[test]
    fn prepared_states_match_labels() {
        for label in InputLabel::ALL {
            let s = prepare_input(label, &WaveplateErrors::default());
            assert!(s.distance(label.bloch()) < 1e-12, "{label:?}: {s}");
        }
    }

    #[test]
    fn recovers_axis_from_noiseless_counts() {
        let fit = fit_measurement_axis(&noiseless(BlochVector::Z, 0.1, 1_000_000)).unwrap();
        assert!(fit.axis.distance(BlochVector::Z) < 1e-6, "{}", fit.axis);
        assert!((fit.scale - 0.1).abs() < 1e-6);
    }

    #[test]
    fn recovers_tilted_axis() {
        let truth = BlochVector::new(0.3, -0.5, 0.7).normalized().unwrap();
        let fit = fit_measurement_axis(&noiseless(truth, 0.2, 10_000_000)).unwrap();
        assert!(fit.axis.distance(truth) < 1e-6);
    }

    #[test]
    fn degenerate_designs_are_rejected() {
        let probes = noiseless(BlochVector::Z, 0.1, 1000);
        assert!(matches!(fit_measurement_axis(&probes[..3]), Err(Error::IllPosedFit(_))));
        // H, V, D, A all lie in the x–z plane.
        assert!(matches!(fit_measurement_axis(&probes[..4]), Err(Error::IllPosedFit(_))));
        let empty: Vec<_> = probes.iter().map(|p| ProbeRecord { counts: 0, ..p.clone() }).collect();
        assert!(matches!(fit_measurement_axis(&empty), Err(Error::IllPosedFit(_))));
    }

    #[test]
    fn antipodal_probe_gives_zero_expected_count() {
        let probes = noiseless(BlochVector::Z, 0.5, 10_000);
        let h = probes.iter().find(|p| p.label == InputLabel::H).unwrap();
        assert_eq!(h.counts, 0);
        let fit = fit_measurement_axis(&probes).unwrap();
        assert!(fit.axis.is_unit());
        assert!(fit.log_likelihood.is_finite());
    }

    #[test]
    fn zero_tolerances_only_redraw_counts() {
        let probes = noiseless(BlochVector::X, 0.1, 100_000);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = parametric_resample(&probes, &WaveplateTolerances::NONE, &mut rng).unwrap();
        for (a, b) in probes.iter().zip(&out) {
            assert!(a.input.distance(b.input) < 1e-12);
            assert_eq!((a.label, a.trials), (b.label, b.trials));
        }
        assert!(probes.iter().zip(&out).any(|(a, b)| a.counts != b.counts));
    }

    #[test]
    fn resampling_is_deterministic() {
        let probes = noiseless(BlochVector::Y, 0.1, 100_000);
        let tol = WaveplateTolerances::default();
        let a = parametric_resample(&probes, &tol, &mut trial_rng(3, 1, 5)).unwrap();
        let b = parametric_resample(&probes, &tol, &mut trial_rng(3, 1, 5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spread_of_symmetric_cloud() {
        let e = 0.01;
        let axes = [
            BlochVector::new(e, 0.0, 1.0).normalized().unwrap(),
            BlochVector::new(-e, 0.0, 1.0).normalized().unwrap(),
            BlochVector::new(0.0, e / 2.0, 1.0).normalized().unwrap(),
            BlochVector::new(0.0, -e / 2.0, 1.0).normalized().unwrap(),
        ];
        let (mean, major, minor) = angular_spread(&axes).unwrap();
        assert!(mean.distance(BlochVector::Z) < 1e-12);
        // Sample variance along x: 2·atan(e)² / 3.
        assert!((major - (2.0 / 3.0f64).sqrt() * e.atan()).abs() < 1e-9);
        assert!((minor - (2.0 / 3.0f64).sqrt() * (e / 2.0).atan()).abs() < 1e-9);
    }

    #[test]
    fn sym3_eigen_matches_diagonal() {
        let m = [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]];
        let ev = sym3_eigenvalues(&m);
        for (a, b) in ev.iter().zip([1.0, 3.0, 5.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let probes = noiseless(BlochVector::Z, 0.1, 1000);
        let mut buf = Vec::new();
        write_probes_csv(&mut buf, &probes).unwrap();
        let back = read_probes_csv(buf.as_slice()).unwrap();
        assert_eq!(back, probes);
        let bad = "label,setting,counts,trials\nQ,1,2,3\n";
        assert!(matches!(read_probes_csv(bad.as_bytes()), Err(Error::Parse(_))));
        let over = "label,setting,counts,trials\nH,1,5,3\n";
        assert!(read_probes_csv(over.as_bytes()).is_err());
    }

    #[test]
    fn too_few_bootstrap_trials() {
        let probes = noiseless(BlochVector::Z, 0.1, 1000);
        let cfg = BootstrapConfig { trials: 10, ..Default::default() };
        assert!(bootstrap_tomography(&probes, &cfg).is_err());
    }
}
