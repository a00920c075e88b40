//! Acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so every criterion prints its
//! verdict even under `cargo test`'s default output capture. The process
//! exits non-zero if any criterion fails.

use std::f64::consts::SQRT_2;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use steering::bloch::optics::{OpticalPipeline, BOB_TARGETS};
use steering::bounds::{optimal_gain, tsirelson, StrategyTable};
use steering::conservative::{worst_case_no_message, worst_case_one_bit};
use steering::efficiency::bias::{bias_study, BiasConfig, LossyPolarization};
use steering::efficiency::{alice_efficiencies, bob_efficiencies, bob_ratio, forward_rates, JointProbabilities};
use steering::experiment::{estimate, simulate, ExperimentConfig, PairSelection};
use steering::measurement::{WORST_NO_MESSAGE_AXES, WORST_ONE_BIT_AXES};
use steering::tomography::{
    bootstrap_setting, fisher_sigma, fit_measurement_axis, simulate_probes, BootstrapConfig, WaveplateTolerances,
};
use steering::{BlochVector, MeasurementSet};

struct Report {
    failures: usize,
}

impl Report {
    fn check(&mut self, id: &str, title: &str, ok: bool, detail: String) {
        println!("{} {id} {title}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failures += 1;
        }
    }
}

fn s3() -> f64 {
    3f64.sqrt()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn criterion_1(rep: &mut Report) {
    let start = Instant::now();
    let meas = MeasurementSet::octahedral();
    let t1 = StrategyTable::build(&meas, 1).unwrap();
    let t2 = StrategyTable::build(&meas, 2).unwrap();
    let cases = [
        (&t1, 0.0, s3() / 3.0),
        (&t1, SQRT_2 - 1.0, (2.0 - SQRT_2) / 3.0),
        (&t1, s3() - SQRT_2, (3.0 * SQRT_2 - 2.0 * s3()) / 3.0),
        (&t2, 0.0, (1.0 + SQRT_2) / 3.0),
        (&t2, SQRT_2 - 1.0, (4.0 - 2.0 * SQRT_2) / 3.0),
    ];
    let worst = cases.iter().map(|(t, r, h)| (t.bound(*r) - h).abs()).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    rep.check(
        "C1",
        "ideal octahedral bounds",
        worst <= 1e-12 && elapsed < Duration::from_secs(1),
        format!("max |h − exact| = {worst:.2e} (tol 1e-12), {elapsed:.2?} (limit 1 s)"),
    );
}

fn criterion_2(rep: &mut Report) {
    let meas = MeasurementSet::octahedral();
    let low = (SQRT_2 - 1.0, (2.0 - SQRT_2) / 3.0);
    let high = (s3() - SQRT_2, (3.0 * SQRT_2 - 2.0 * s3()) / 3.0);
    let one_bit = (SQRT_2 - 1.0, (4.0 - 2.0 * SQRT_2) / 3.0);
    let cases = [
        (1, 0.40, low),
        (1, 0.70, high),
        (1, 0.90, high),
        (1, 0.30, (1.0, 0.0)),
        (2, 0.70, one_bit),
        (2, 0.90, one_bit),
        (2, 0.60, (1.0, 0.0)),
    ];
    let mut worst: f64 = 0.0;
    for (d, eta, (r, h)) in cases {
        let g = optimal_gain(&meas, d, eta).unwrap();
        worst = worst.max((g.r - r).abs()).max((g.h - h).abs());
    }
    rep.check(
        "C2",
        "optimal gain regimes",
        worst <= 1e-12,
        format!("max deviation from the analytic branches = {worst:.2e} over {} cases", cases.len()),
    );
}

fn max_component_error(got: &MeasurementSet, want: &[[f64; 3]; 3]) -> f64 {
    got.axes()
        .iter()
        .zip(want)
        .flat_map(|(a, w)| a.to_array().into_iter().zip(*w).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn criterion_3(rep: &mut Report) {
    let meas = MeasurementSet::measured();
    let none = worst_case_no_message(&meas, 5.0).unwrap();
    let one = worst_case_one_bit(&meas, 5.0).unwrap();
    let e0 = max_component_error(&none.rotated, &WORST_NO_MESSAGE_AXES);
    let e1 = max_component_error(&one.rotated, &WORST_ONE_BIT_AXES);
    rep.check(
        "C3",
        "conservative rotation of the measured axes",
        e0 <= 1e-3 && e1 <= 1e-3,
        format!("max component error: no-message {e0:.1e}, one-bit {e1:.1e} (tol 1e-3)"),
    );
}

fn criterion_4(rep: &mut Report) {
    let start = Instant::now();
    let g0 = optimal_gain(&MeasurementSet::worst_no_message(), 1, 0.748).unwrap();
    let g1 = optimal_gain(&MeasurementSet::worst_one_bit(), 2, 0.748).unwrap();
    let elapsed = start.elapsed();
    let ok = close(g0.r, 0.4046, 1e-3)
        && close(g0.h, 0.2548, 1e-3)
        && close(g1.r, 0.5930, 1e-3)
        && close(g1.h, 0.2713, 1e-3)
        && close(g0.mu_min, 0.745, 1e-3)
        && close(g1.mu_min, 0.956, 1e-3)
        && elapsed < Duration::from_secs(10);
    rep.check(
        "C4",
        "experimental optimum at eta = 0.748",
        ok,
        format!(
            "d=1 (r, h, mu_min) = ({:.4}, {:.4}, {:.4}), d=2 = ({:.4}, {:.4}, {:.4}) (tol 1e-3), {elapsed:.2?} (limit 10 s)",
            g0.r, g0.h, g0.mu_min, g1.r, g1.h, g1.mu_min
        ),
    );
}

fn criterion_5(rep: &mut Report) {
    let meas = MeasurementSet::octahedral();
    let t0 = tsirelson(&meas, 1).unwrap();
    let t1 = tsirelson(&meas, 2).unwrap();
    let e = (t0 - (3.0 - s3()) / 3.0).abs().max((t1 - (2.0 - SQRT_2) / 3.0).abs());
    rep.check(
        "C5",
        "quantum maxima",
        e <= 1e-12,
        format!("T(d=1) = {t0:.12}, T(d=2) = {t1:.12}, max error {e:.1e} (tol 1e-12)"),
    );
}

fn criterion_6(rep: &mut Report) {
    let mut quoted = OpticalPipeline::bob_measurement();
    let cal = quoted.calibrate_pockels_axis(BlochVector::Z, BOB_TARGETS).unwrap();
    let exact = OpticalPipeline::bob_measurement_exact().mapping_residual(BlochVector::Z, BOB_TARGETS).unwrap();
    rep.check(
        "C6",
        "measurement pipeline maps |V> to |V>, |D>, |L>",
        cal.residual_after < 1e-9 && exact < 1e-9,
        format!(
            "quoted angles: {:.2e} before / {:.2e} after calibration (axis tilt {:.4} deg); closed-form angles: {exact:.2e} (tol 1e-9)",
            cal.residual_before, cal.residual_after, cal.tilt_deg
        ),
    );
}

fn random_probs(rng: &mut ChaCha8Rng) -> [[f64; 2]; 2] {
    let w: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.01..1.0));
    let s: f64 = w.iter().sum();
    [[w[0] / s, w[1] / s], [w[2] / s, w[3] / s]]
}

fn criterion_7(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst, mut used, mut skipped) = (0.0f64, 0, 0);
    while used < 1000 {
        let alice = [[rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)]];
        let bob = [[rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)]];
        let probs: JointProbabilities = [((0, 0), random_probs(&mut rng))].into();
        let rates = forward_rates(&alice, &bob, &probs, rng.random_range(1e3..1e7)).unwrap();
        match (alice_efficiencies(&rates, 0, 0), bob_efficiencies(&rates, 0, 0), bob_ratio(&rates, 0)) {
            (Ok(a), Ok(b), Ok(ratio)) => {
                let errs = [a.0 - alice[0][0], a.1 - alice[0][1], b.0 - bob[0][0], b.1 - bob[0][1]];
                let rel = ratio / (bob[0][0] / bob[0][1]) - 1.0;
                worst = errs.iter().map(|e| e.abs()).fold(worst, f64::max).max(rel.abs());
                used += 1;
            }
            _ => skipped += 1,
        }
    }

    let base = bias_study(&BiasConfig::default()).unwrap();
    let bias_ok = base.bias < 0.0 && (2e-4..=2e-3).contains(&base.bias.abs());

    // "About x%" for x% extra loss: the exact model gives x/(1 − x) when the
    // lossy polarization sits in the numerator.
    let pdl_limit = 0.02 / 0.98 + 1e-9;
    let mut pdl_worst: f64 = 0.0;
    for axis in [BlochVector::Z, BlochVector::X, BlochVector::Y] {
        for lossy in [LossyPolarization::H, LossyPolarization::V] {
            let clean = bias_study(&BiasConfig { axis, ..BiasConfig::default() }).unwrap();
            let r = bias_study(&BiasConfig { axis, lossy, pdl_fraction: 0.02, ..BiasConfig::default() }).unwrap();
            pdl_worst = pdl_worst.max((r.estimated_ratio / clean.estimated_ratio - 1.0).abs());
        }
    }
    rep.check(
        "C7",
        "efficiency inversion and bias",
        worst <= 1e-10 && bias_ok && pdl_worst <= pdl_limit,
        format!(
            "inversion max error {worst:.1e} over {used} draws ({skipped} ill-conditioned skipped, tol 1e-10); \
             ratio bias {:.3e} (want negative, |.| in [2e-4, 2e-3]); 2% PDL shifts ratio by at most {:.3}% (limit {:.3}%)",
            base.bias,
            100.0 * pdl_worst,
            100.0 * pdl_limit
        ),
    );
}

fn criterion_8(rep: &mut Report) {
    let start = Instant::now();
    let eta_a = 0.748;
    let g0 = optimal_gain(&MeasurementSet::worst_no_message(), 1, eta_a).unwrap();
    let g1 = optimal_gain(&MeasurementSet::worst_one_bit(), 2, eta_a).unwrap();
    let axes = MeasurementSet::measured().axes().to_vec();
    let run = |mu: f64, seed: u64| {
        let mut cfg = ExperimentConfig::uniform(mu, axes.clone(), eta_a, 1.0, 3_333_334);
        cfg.pairs = PairSelection::Matched;
        cfg.seed = seed;
        simulate(&cfg).unwrap()
    };
    let ratios = [1.0; 3];
    let high = run(0.99, 11);
    let low = run(0.93, 12);
    let r0 = estimate(&high, &ratios, g0.r, g0.h).unwrap();
    let r1 = estimate(&high, &ratios, g1.r, g1.h).unwrap();
    let r1_low = estimate(&low, &ratios, g1.r, g1.h).unwrap();
    let elapsed = start.elapsed();

    // With identical axes on both sides the expected residual is exactly
    // eta_A (mu − r) − h.
    let expected = |mu: f64, r: f64, h: f64| eta_a * (mu - r) - h;
    let agree = [(&r0, 0.99, &g0), (&r1, 0.99, &g1), (&r1_low, 0.93, &g1)]
        .iter()
        .all(|(rep, mu, g)| (rep.residual - expected(*mu, g.r, g.h)).abs() < 5.0 * rep.std_error);
    let ok = r0.significance() > 5.0
        && r1.significance() > 5.0
        && r1_low.significance() < -5.0
        && agree
        && elapsed < Duration::from_secs(120);
    rep.check(
        "C8",
        "simulated violation and non-violation",
        ok,
        format!(
            "mu=0.99: d=1 residual {:.4} ({:+.1} SE), d=2 {:.4} ({:+.1} SE); mu=0.93: d=2 {:.4} ({:+.1} SE); \
             all within 5 SE of eta(mu − r) − h: {agree}; {elapsed:.2?} (limit 120 s)",
            r0.residual,
            r0.significance(),
            r1.residual,
            r1.significance(),
            r1_low.residual,
            r1_low.significance()
        ),
    );
}

fn criterion_9(rep: &mut Report) {
    // Lab-scale statistics: 120 one-minute probes (20 per input state) at
    // 3.3e4 heralded trials per second.
    let trials = 60 * 33_000;
    let repeats = 20;
    let truth = BlochVector::new(0.9984, 0.0559, -0.0089).normalized().unwrap();
    let scale = 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut inside = 0;
    let runs = 200;
    for _ in 0..runs {
        let probes = simulate_probes(truth, 1, scale, trials, repeats, &mut rng).unwrap();
        let fit = fit_measurement_axis(&probes).unwrap();
        let (sigma, _) = fisher_sigma(&probes, truth, scale).unwrap();
        if fit.axis.angle_to(truth) <= 3.0 * sigma {
            inside += 1;
        }
    }
    let coverage = inside as f64 / runs as f64;

    let probes = simulate_probes(truth, 1, scale, trials, repeats, &mut rng).unwrap();
    let cfg = |n| BootstrapConfig { trials: n, seed: 21, tolerances: WaveplateTolerances::default() };
    let b5 = bootstrap_setting(&probes, 1, &cfg(5_000)).unwrap();
    let b10 = bootstrap_setting(&probes, 1, &cfg(10_000)).unwrap();
    let stability = (b5.sigma / b10.sigma - 1.0).abs();
    let drift = b5.axis.angle_to(b10.axis);
    rep.check(
        "C9",
        "tomography recovery and bootstrap stability",
        coverage >= 0.95 && stability <= 0.10 && drift < 1e-3,
        format!(
            "{inside}/{runs} fits within 3 sigma (need 95%); bootstrap sigma {:.4} at 5k vs {:.4} at 10k rad \
             ({:.1}% apart, limit 10%); mean axes {drift:.1e} rad apart (limit 1e-3)",
            b5.sigma,
            b10.sigma,
            100.0 * stability
        ),
    );
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut rep = Report { failures: 0 };
    criterion_1(&mut rep);
    criterion_2(&mut rep);
    criterion_3(&mut rep);
    criterion_4(&mut rep);
    criterion_5(&mut rep);
    criterion_6(&mut rep);
    criterion_7(&mut rep);
    criterion_8(&mut rep);
    criterion_9(&mut rep);
    println!("acceptance: {} of 9 criteria failed", rep.failures);
    if rep.failures > 0 {
        std::process::exit(1);
    }
}
