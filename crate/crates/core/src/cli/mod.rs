//! Command-line front end.
//!
//! Every output (file or stdout) starts with `#` comment lines recording the
//! crate version, the seed and the fully resolved arguments, followed by CSV.

mod campaign;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bloch::BlochVector;
use crate::bounds::StrategyTable;
use crate::conservative::{
    worst_case_no_message, worst_case_one_bit, worst_case_one_bit_exhaustive, ConservativeResult,
};
use crate::efficiency::{
    alice_efficiencies, bias_study, bob_efficiencies, bob_ratio_resampled, bob_ratio_with_error,
    conservative_ratio, read_rates_csv, BiasConfig, LossyPolarization, RatioEstimate,
};
use crate::error::{Error, Result};
use crate::experiment::{
    bootstrap_std_error, estimate, ftl_speed, read_counts_csv, simulate, write_counts_csv,
    ExperimentConfig, PairSelection, ResidualReport,
};
use crate::measurement::MeasurementSet;
use crate::tomography::{bootstrap_tomography, read_probes_csv, BootstrapConfig, WaveplateTolerances};

pub use campaign::{run_campaign, CampaignConfig};

#[derive(Parser, Debug)]
#[command(name = "steering", version, about = "Communication-assisted EPR-steering bounds and analysis")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "STEERING_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Bound h(r) with a maximizing strategy.
    Bounds(BoundsArgs),
    /// Optimal gain r*, bound h* and minimum singlet fraction at an efficiency.
    Optimize(OptimizeArgs),
    /// Minimum singlet fraction over a grid of efficiencies.
    Curve(CurveArgs),
    /// Worst-case rotation of the measurement axes.
    Conservative(ConservativeArgs),
    /// Bootstrapped axis tomography from probe counts.
    Tomography(TomographyArgs),
    /// Detector efficiencies and ratios from singles/coincidence rates.
    Klyshko(KlyshkoArgs),
    /// Efficiency-ratio bias from backgrounds, double pairs and loss.
    Bias(BiasArgs),
    /// Monte-Carlo trial counts for a lossy Werner state.
    Simulate(SimulateArgs),
    /// Experimental inequality from trial counts.
    Analyze(AnalyzeArgs),
    /// Straight-line signalling speed.
    Ftl(FtlArgs),
    /// Run a full configured campaign.
    Campaign(CampaignArgs),
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct MeasArgs {
    /// Ideal σ_z, σ_x, σ_y settings (the default).
    #[arg(long, conflicts_with_all = ["preset", "axes", "axes_file"])]
    pub octahedral: bool,
    /// Named set: octahedral, measured, worst-no-message, worst-one-bit.
    #[arg(long, conflicts_with_all = ["axes", "axes_file"])]
    pub preset: Option<String>,
    /// Inline axes, "x,y,z;x,y,z;..." (normalized on input).
    #[arg(long, allow_hyphen_values = true, conflicts_with = "axes_file")]
    pub axes: Option<String>,
    /// CSV with columns x,y,z and optionally sigma (e.g. tomography output).
    #[arg(long)]
    pub axes_file: Option<PathBuf>,
    /// Angular uncertainty in radians applied to every axis.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Deserialize)]
struct AxisRow {
    x: f64,
    y: f64,
    z: f64,
    sigma: Option<f64>,
}

pub fn parse_axes(text: &str) -> Result<Vec<[f64; 3]>> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|triple| {
            let v: Vec<f64> = triple
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| Error::Parse(format!("axis component '{x}': {e}"))))
                .collect::<Result<_>>()?;
            <[f64; 3]>::try_from(v).map_err(|_| Error::Parse(format!("axis '{triple}' needs 3 components")))
        })
        .collect()
}

pub fn read_axes_csv(path: &Path) -> Result<MeasurementSet> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
    let mut raw = Vec::new();
    let mut sigmas = Vec::new();
    for row in rdr.deserialize::<AxisRow>() {
        let row = row?;
        raw.push([row.x, row.y, row.z]);
        sigmas.push(row.sigma.unwrap_or(0.0));
    }
    MeasurementSet::from_raw(&raw, sigmas)
}

impl MeasArgs {
    pub fn resolve(&self) -> Result<MeasurementSet> {
        let set = if let Some(name) = &self.preset {
            MeasurementSet::preset(name)?
        } else if let Some(text) = &self.axes {
            let raw = parse_axes(text)?;
            let n = raw.len();
            MeasurementSet::from_raw(&raw, vec![0.0; n])?
        } else if let Some(path) = &self.axes_file {
            read_axes_csv(path)?
        } else {
            MeasurementSet::octahedral()
        };
        // Bounds hold for any set; far-from-unbiased axes just make the
        // single-gain correlation family a poor choice.
        let defect = set.unbiasedness_defect();
        if set.len() <= 3 && defect > ASYMMETRY_WARNING {
            eprintln!("warning: settings are far from mutually unbiased (max |b_i·b_j| = {defect:.3})");
        }
        Ok(match self.sigma {
            Some(s) => {
                let n = set.len();
                MeasurementSet::new(set.axes().to_vec(), vec![s; n])?
            }
            None => set,
        })
    }
}

/// `|b_i·b_j|` above which the CLI warns about an asymmetric set.
pub const ASYMMETRY_WARNING: f64 = 0.5;

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct OutputArgs {
    /// Write to this file instead of standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub meas: MeasArgs,
    /// Message alphabet size.
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    /// Gain parameter(s) in [0, 1].
    #[arg(long, num_args = 1.., default_values_t = [0.0])]
    pub r: Vec<f64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub meas: MeasArgs,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    /// Heralding efficiency in (0, 1].
    #[arg(long)]
    pub eta: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct CurveArgs {
    #[command(flatten)]
    pub meas: MeasArgs,
    /// Message alphabet sizes, one curve each.
    #[arg(long, num_args = 1.., default_values_t = [1])]
    pub d: Vec<usize>,
    #[arg(long, default_value_t = 0.3)]
    pub eta_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eta_max: f64,
    #[arg(long, default_value_t = 71)]
    pub steps: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConservativeMode {
    NoMessage,
    OneBit,
    OneBitExhaustive,
}

#[derive(Args, Debug, Serialize)]
pub struct ConservativeArgs {
    #[command(flatten)]
    pub meas: MeasArgs,
    #[arg(long, value_enum, default_value_t = ConservativeMode::NoMessage)]
    pub mode: ConservativeMode,
    #[arg(long, default_value_t = 5.0)]
    pub k_sigma: f64,
    /// Alphabet size for the exhaustive mode's bound comparison.
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Efficiency for the exhaustive mode's bound comparison.
    #[arg(long, default_value_t = 0.748)]
    pub eta: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct TomographyArgs {
    /// Probe CSV: label,setting,counts,trials.
    #[arg(long)]
    pub probes: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Retardance tolerance of the preparation waveplates, in waves.
    #[arg(long, default_value_t = 0.005)]
    pub retardance: f64,
    /// Zero-angle standard deviation of the preparation waveplates, degrees.
    #[arg(long, default_value_t = 0.1)]
    pub zero_angle: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct KlyshkoArgs {
    /// Rates CSV (kind,k,j,a,b,rate); repeat for several averaging windows.
    #[arg(long, required = true, num_args = 1..)]
    pub rates: Vec<PathBuf>,
    /// Poisson resamples for a cross-check of the ratio error (0 to skip).
    #[arg(long, default_value_t = 0)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative loss allowance for the conservative ratio.
    #[arg(long, default_value_t = 0.02)]
    pub loss_allowance: f64,
    /// Standard errors subtracted for the conservative ratio.
    #[arg(long, default_value_t = 5.0)]
    pub k_se: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct BiasArgs {
    #[arg(long, default_value_t = 200.0)]
    pub background: f64,
    #[arg(long, default_value_t = 80e6)]
    pub trial_rate: f64,
    #[arg(long, default_value_t = 0.0072)]
    pub pair_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    pub pdl: f64,
    /// Bob's `+` and `−` efficiencies.
    #[arg(long, num_args = 2, default_values_t = [0.8, 0.8 / 1.16])]
    pub bob_eff: Vec<f64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Bob's true axes; Alice's are matched to them.
    #[command(flatten)]
    pub meas: MeasArgs,
    #[arg(long)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.748)]
    pub eta_a: f64,
    /// Bob's `+` and `−` efficiencies (same for every setting).
    #[arg(long, num_args = 2, default_values_t = [1.0, 1.0])]
    pub bob_eff: Vec<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials_per_pair: u64,
    /// Simulate only matched settings (k = j).
    #[arg(long)]
    pub matched: bool,
    #[arg(long, default_value_t = 0.0)]
    pub dark_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct AnalyzeArgs {
    /// Counts CSV (k,j,a,b,N).
    #[arg(long)]
    pub counts: PathBuf,
    /// Bob's efficiency ratio per setting (default 1 for all).
    #[arg(long, value_delimiter = ',')]
    pub ratios: Vec<f64>,
    /// Gain parameter; with --h, skips the bound computation.
    #[arg(long, requires = "h")]
    pub r: Option<f64>,
    #[arg(long, requires = "r")]
    pub h: Option<f64>,
    /// Alphabet size when the bound is computed from the measurement set.
    #[arg(long, default_values_t = [1], num_args = 1..)]
    pub d: Vec<usize>,
    /// Efficiency used to optimize the gain when computing the bound.
    #[arg(long, default_value_t = 0.748)]
    pub eta: f64,
    #[command(flatten)]
    pub meas: MeasArgs,
    /// Poisson resamples for a bootstrap error cross-check (0 to skip).
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct FtlArgs {
    /// Separation in metres.
    #[arg(long)]
    pub distance: f64,
    /// Available time in seconds.
    #[arg(long)]
    pub time: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct CampaignArgs {
    /// TOML campaign file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

/// Comment lines written before any tabular output.
pub fn header(command: &str, seed: Option<u64>, config: &impl Serialize) -> String {
    let config = serde_json::to_string(config).unwrap_or_else(|_| "{}".into());
    let seed = seed.map_or("none".to_string(), |s| s.to_string());
    format!(
        "# steering {}\n# command: {command}\n# seed: {seed}\n# config: {config}\n",
        crate::VERSION
    )
}

/// Opens the destination and writes the header.
pub fn open_output(path: Option<&Path>, head: &str) -> Result<Box<dyn Write>> {
    let mut w: Box<dyn Write> = match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    w.write_all(head.as_bytes())?;
    Ok(w)
}

fn csv_writer(w: Box<dyn Write>) -> csv::Writer<Box<dyn Write>> {
    csv::WriterBuilder::new().flexible(true).from_writer(w)
}

fn fmt(x: f64) -> String {
    format!("{x:.12}")
}

fn fmt_alpha(a: &[i8]) -> String {
    a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn run_bounds(args: &BoundsArgs) -> Result<()> {
    let meas = args.meas.resolve()?;
    if let Some(r) = args.r.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::invalid(format!("gain parameter must lie in [0, 1], got {r}")));
    }
    let table = StrategyTable::build(&meas, args.d)?;
    let out = open_output(args.out.output.as_deref(), &header("bounds", None, args))?;
    let mut w = csv_writer(out);
    w.write_record(["d", "r", "h", "alpha", "ell", "ensemble"])?;
    for &r in &args.r {
        let res = table.result_at(&meas, r)?;
        let ell: Vec<String> = res.strategy.ell().iter().map(|l| (l + 1).to_string()).collect();
        let ens: Vec<String> = res
            .ensemble
            .states
            .iter()
            .map(|s| s.map_or("none".into(), |v| format!("({:.6} {:.6} {:.6})", v.x, v.y, v.z)))
            .collect();
        w.write_record([
            args.d.to_string(),
            fmt(r),
            fmt(res.h),
            fmt_alpha(res.strategy.alpha()),
            ell.join(" "),
            ens.join(" "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_optimize(args: &OptimizeArgs) -> Result<()> {
    let meas = args.meas.resolve()?;
    let g = StrategyTable::build(&meas, args.d)?.optimal_gain(args.eta)?;
    let out = open_output(args.out.output.as_deref(), &header("optimize", None, args))?;
    let mut w = csv_writer(out);
    w.write_record(["d", "eta", "r", "h", "mu_min", "violable"])?;
    w.write_record([
        args.d.to_string(),
        fmt(g.eta),
        fmt(g.r),
        fmt(g.h),
        fmt(g.mu_min),
        g.violable().to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn eta_grid(min: f64, max: f64, steps: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max <= 1.0 && min <= max) || steps == 0 {
        return Err(Error::invalid("efficiency grid must satisfy 0 < min <= max <= 1 with steps >= 1"));
    }
    if steps == 1 {
        return Ok(vec![min]);
    }
    Ok((0..steps).map(|i| min + (max - min) * i as f64 / (steps - 1) as f64).collect())
}

fn run_curve(args: &CurveArgs) -> Result<()> {
    let meas = args.meas.resolve()?;
    let grid = eta_grid(args.eta_min, args.eta_max, args.steps)?;
    let tables = args.d.iter().map(|&d| StrategyTable::build(&meas, d)).collect::<Result<Vec<_>>>()?;
    let out = open_output(args.out.output.as_deref(), &header("curve", None, args))?;
    let mut w = csv_writer(out);
    w.write_record(["d", "eta", "r", "h", "mu_min"])?;
    for table in &tables {
        for &eta in &grid {
            let g = table.optimal_gain(eta)?;
            w.write_record([table.d().to_string(), fmt(eta), fmt(g.r), fmt(g.h), fmt(g.mu_min)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_axes(w: &mut csv::Writer<Box<dyn Write>>, set: &MeasurementSet) -> Result<()> {
    w.write_record(["setting", "x", "y", "z", "sigma"])?;
    for (j, (a, s)) in set.axes().iter().zip(set.sigmas()).enumerate() {
        w.write_record([(j + 1).to_string(), fmt(a.x), fmt(a.y), fmt(a.z), fmt(*s)])?;
    }
    Ok(())
}

fn combo_note(res: &ConservativeResult) -> String {
    let members: Vec<String> = res.combo.members.iter().map(|m| (m + 1).to_string()).collect();
    format!(
        "# signs: {}\n# rotated settings: {}\n# mean: {}\n",
        fmt_alpha(&res.combo.signs),
        members.join(" "),
        res.combo.mean
    )
}

fn run_conservative(args: &ConservativeArgs) -> Result<()> {
    let meas = args.meas.resolve()?;
    let (res, note) = match args.mode {
        ConservativeMode::NoMessage => (worst_case_no_message(&meas, args.k_sigma)?, String::new()),
        ConservativeMode::OneBit => (worst_case_one_bit(&meas, args.k_sigma)?, String::new()),
        ConservativeMode::OneBitExhaustive => {
            let (res, g) = worst_case_one_bit_exhaustive(&meas, args.k_sigma, args.d, args.eta)?;
            (res, format!("# worst mu_min: {:.12} (r = {:.12}, h = {:.12})\n", g.mu_min, g.r, g.h))
        }
    };
    let mut out = open_output(args.out.output.as_deref(), &header("conservative", None, args))?;
    out.write_all(combo_note(&res).as_bytes())?;
    out.write_all(note.as_bytes())?;
    let mut w = csv_writer(out);
    write_axes(&mut w, &res.rotated)?;
    w.flush()?;
    Ok(())
}

fn run_tomography(args: &TomographyArgs) -> Result<()> {
    let probes = read_probes_csv(File::open(&args.probes)?)?;
    let cfg = BootstrapConfig {
        trials: args.trials,
        seed: args.seed,
        tolerances: WaveplateTolerances { retardance_waves: args.retardance, zero_angle_deg: args.zero_angle },
    };
    let estimates = bootstrap_tomography(&probes, &cfg)?;
    let out = open_output(args.out.output.as_deref(), &header("tomography", Some(args.seed), args))?;
    let mut w = csv_writer(out);
    w.write_record(["setting", "x", "y", "z", "sigma", "sigma_minor", "samples", "failures"])?;
    for e in estimates {
        w.write_record([
            e.setting.to_string(),
            fmt(e.axis.x),
            fmt(e.axis.y),
            fmt(e.axis.z),
            fmt(e.sigma),
            fmt(e.sigma_minor),
            e.samples.to_string(),
            e.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn opt(x: Result<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn pair_field(x: &Result<(f64, f64)>, second: bool) -> String {
    match x {
        Ok((a, b)) => fmt(if second { *b } else { *a }),
        Err(_) => String::new(),
    }
}

fn run_klyshko(args: &KlyshkoArgs) -> Result<()> {
    let tables = args
        .rates
        .iter()
        .map(|p| read_rates_csv(File::open(p)?))
        .collect::<Result<Vec<_>>>()?;
    let out = open_output(args.out.output.as_deref(), &header("klyshko", Some(args.seed), args))?;
    let mut w = csv_writer(out);
    w.write_record([
        "window", "k", "j", "alice_plus", "alice_minus", "bob_plus", "bob_minus", "ratio", "ratio_se",
        "resampled_se", "status",
    ])?;
    let mut windows: std::collections::BTreeMap<usize, Vec<RatioEstimate>> = Default::default();
    for (win, table) in tables.iter().enumerate() {
        for &(k, j) in table.cells.keys() {
            let alice = alice_efficiencies(table, k, j);
            let bob = bob_efficiencies(table, k, j);
            let status = match (&alice, &bob) {
                (Err(e), _) | (_, Err(e)) => e.kind().to_string(),
                _ => "ok".to_string(),
            };
            let (mut ratio, mut se, mut rs) = (String::new(), String::new(), String::new());
            if k == j {
                match bob_ratio_with_error(table, j) {
                    Ok(est) => {
                        ratio = fmt(est.ratio);
                        se = fmt(est.std_error);
                        windows.entry(j).or_default().push(est);
                    }
                    Err(Error::InsufficientData(_)) => ratio = opt(crate::efficiency::bob_ratio(table, j)),
                    Err(_) => {}
                }
                if args.resamples > 0 {
                    rs = opt(bob_ratio_resampled(table, j, args.resamples, args.seed).map(|e| e.std_error));
                }
            }
            w.write_record([
                (win + 1).to_string(),
                k.to_string(),
                j.to_string(),
                pair_field(&alice, false),
                pair_field(&alice, true),
                pair_field(&bob, false),
                pair_field(&bob, true),
                ratio,
                se,
                rs,
                status,
            ])?;
        }
    }
    w.flush()?;
    let mut out = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    for (j, ests) in &windows {
        let c = conservative_ratio(ests, args.loss_allowance, args.k_se)?;
        writeln!(out, "# conservative ratio, setting {j}: {c:.6}")?;
    }
    out.flush()?;
    Ok(())
}

fn run_bias(args: &BiasArgs) -> Result<()> {
    let base = BiasConfig {
        background_rate: args.background,
        trial_rate: args.trial_rate,
        pair_prob: args.pair_prob,
        pdl_fraction: args.pdl,
        bob_eff: [args.bob_eff[0], args.bob_eff[1]],
        ..BiasConfig::default()
    };
    let out = open_output(args.out.output.as_deref(), &header("bias", None, args))?;
    let mut w = csv_writer(out);
    w.write_record(["case", "axis", "lossy", "true_ratio", "estimated_ratio", "bias", "relative_bias"])?;
    let mut cases = vec![("combined", base)];
    if args.pdl > 0.0 {
        for axis in [BlochVector::Z, BlochVector::X, BlochVector::Y] {
            for lossy in [LossyPolarization::H, LossyPolarization::V] {
                cases.push(("loss-only", BiasConfig { axis, lossy, background_rate: 0.0, pair_prob: 1e-9, ..base }));
            }
        }
    }
    for (case, cfg) in cases {
        let rep = bias_study(&cfg)?;
        w.write_record([
            case.to_string(),
            format!("{}", cfg.axis),
            format!("{:?}", cfg.lossy),
            fmt(rep.true_ratio),
            fmt(rep.estimated_ratio),
            format!("{:.6e}", rep.bias),
            format!("{:.6e}", rep.relative_bias),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn simulation_config(args: &SimulateArgs) -> Result<ExperimentConfig> {
    let meas = args.meas.resolve()?;
    let mut cfg = ExperimentConfig::uniform(args.mu, meas.axes().to_vec(), args.eta_a, 1.0, args.trials_per_pair);
    cfg.bob_eff = vec![[args.bob_eff[0], args.bob_eff[1]]; meas.len()];
    cfg.pairs = if args.matched { PairSelection::Matched } else { PairSelection::All };
    cfg.dark_prob = args.dark_prob;
    cfg.seed = args.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = simulation_config(args)?;
    let counts = simulate(&cfg)?;
    let out = open_output(args.out.output.as_deref(), &header("simulate", Some(args.seed), &cfg))?;
    write_counts_csv(out, &counts)?;
    Ok(())
}

pub fn write_report(w: &mut csv::Writer<Box<dyn Write>>, label: &str, rep: &ResidualReport, boot: Option<f64>) -> Result<()> {
    for s in &rep.settings {
        w.write_record([
            label.to_string(),
            format!("setting {}", s.setting + 1),
            fmt(s.correlator),
            fmt(s.heralding),
            s.detections.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    w.write_record([
        label.to_string(),
        "total".into(),
        String::new(),
        fmt(rep.eta_a),
        rep.settings.iter().map(|s| s.detections).sum::<u64>().to_string(),
        fmt(rep.r),
        fmt(rep.h),
        fmt(rep.s_tilde),
        fmt(rep.residual),
        fmt(rep.std_error),
        boot.map(fmt).unwrap_or_default(),
    ])?;
    Ok(())
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "bound", "row", "correlator", "heralding", "detections", "r", "h", "s_tilde", "residual", "std_error",
    "bootstrap_se",
];

fn run_analyze(args: &AnalyzeArgs) -> Result<()> {
    let counts = read_counts_csv(File::open(&args.counts)?)?;
    let n = counts.cells.keys().map(|(_, j)| j + 1).max().unwrap_or(0);
    let ratios = if args.ratios.is_empty() { vec![1.0; n] } else { args.ratios.clone() };
    let mut bounds = Vec::new();
    if let (Some(r), Some(h)) = (args.r, args.h) {
        bounds.push(("given".to_string(), r, h));
    } else {
        let meas = args.meas.resolve()?;
        for &d in &args.d {
            let g = StrategyTable::build(&meas, d)?.optimal_gain(args.eta)?;
            bounds.push((format!("d={d}"), g.r, g.h));
        }
    }
    let out = open_output(args.out.output.as_deref(), &header("analyze", Some(args.seed), args))?;
    let mut w = csv_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for (label, r, h) in bounds {
        let rep = estimate(&counts, &ratios, r, h)?;
        let boot = if args.bootstrap > 0 {
            Some(bootstrap_std_error(&counts, &ratios, r, args.bootstrap, args.seed)?)
        } else {
            None
        };
        write_report(&mut w, &label, &rep, boot)?;
    }
    w.flush()?;
    Ok(())
}

fn run_ftl(args: &FtlArgs) -> Result<()> {
    let b = ftl_speed(args.distance, args.time)?;
    let out = open_output(args.out.output.as_deref(), &header("ftl", None, args))?;
    let mut w = csv_writer(out);
    w.write_record(["distance_m", "time_s", "speed_m_per_s", "speed_over_c"])?;
    w.write_record([
        b.distance_m.to_string(),
        format!("{:e}", b.time_s),
        format!("{:.6e}", b.speed_m_per_s),
        format!("{:.6}", b.speed_over_c),
    ])?;
    w.flush()?;
    Ok(())
}

/// Exit status for an error: 2 for bad input, 1 for failed computations.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::Parse(_) | Error::Csv(_) | Error::Io(_) => 2,
        _ => 1,
    }
}

/// One-line JSON description of an error for standard error.
pub fn error_line(err: &Error) -> String {
    serde_json::json!({ "error": err.kind(), "message": err.to_string(), "exit": exit_code(err) }).to_string()
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::invalid("thread count must be >= 1"));
        }
        // Ignore failure: the pool may already be initialized in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.command {
        Command::Bounds(a) => run_bounds(a),
        Command::Optimize(a) => run_optimize(a),
        Command::Curve(a) => run_curve(a),
        Command::Conservative(a) => run_conservative(a),
        Command::Tomography(a) => run_tomography(a),
        Command::Klyshko(a) => run_klyshko(a),
        Command::Bias(a) => run_bias(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Ftl(a) => run_ftl(a),
        Command::Campaign(a) => {
            let text = std::fs::read_to_string(&a.config)?;
            let mut cfg = CampaignConfig::from_toml(&text)?;
            if let Some(dir) = &a.output_dir {
                cfg.output_dir = dir.clone();
            }
            let summary = run_campaign(&cfg)?;
            for f in summary.files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code != 0 {
                eprintln!(
                    "{}",
                    serde_json::json!({ "error": "usage", "message": e.kind().to_string(), "exit": code })
                );
            }
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            exit_code(&e)
        }
    }
}
