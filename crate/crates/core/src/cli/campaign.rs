//! Config-file-driven end-to-end runs.
//!
//! A campaign resolves a measurement set, optionally worst-cases it for each
//! message alphabet, writes optimal gains and minimum-purity curves, and, if a
//! simulation block is present, simulates trial counts and evaluates the
//! experimental inequality against each bound.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{eta_grid, header, open_output, read_axes_csv, write_axes, write_report, REPORT_COLUMNS};
use crate::bounds::{GainOptimum, StrategyTable};
use crate::conservative::{worst_case_no_message, worst_case_one_bit, DEFAULT_K_SIGMA};
use crate::error::{Error, Result};
use crate::experiment::{estimate, simulate, write_counts_csv, ExperimentConfig, PairSelection, ResidualReport};
use crate::measurement::MeasurementSet;
use crate::tomography::{bootstrap_tomography, read_probes_csv, BootstrapConfig};

fn default_d() -> Vec<usize> {
    vec![1]
}

fn default_k_sigma() -> f64 {
    DEFAULT_K_SIGMA
}

fn default_eta() -> f64 {
    0.748
}

fn default_true() -> bool {
    true
}

fn default_bob_eff() -> [f64; 2] {
    [1.0, 1.0]
}

fn default_bootstrap_trials() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSource {
    /// Named preset, see [`MeasurementSet::preset`].
    pub preset: Option<String>,
    /// Inline axes (normalized on input).
    pub axes: Option<Vec<[f64; 3]>>,
    /// Fitted axes CSV with columns x,y,z[,sigma].
    pub axes_csv: Option<PathBuf>,
    /// Raw probe CSV (label,setting,counts,trials), fitted by bootstrap.
    pub probes_csv: Option<PathBuf>,
    #[serde(default = "default_bootstrap_trials")]
    pub bootstrap_trials: usize,
    /// Angular uncertainty applied to every axis, radians.
    pub sigma: Option<f64>,
    /// Worst-case the axes before computing bounds.
    #[serde(default)]
    pub conservative: bool,
    #[serde(default = "default_k_sigma")]
    pub k_sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaGrid {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl Default for EtaGrid {
    fn default() -> Self {
        EtaGrid { min: 0.3, max: 1.0, steps: 71 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    pub mu: f64,
    #[serde(default = "default_eta")]
    pub eta_a: f64,
    /// Bob's `[+, −]` efficiencies for every setting.
    #[serde(default = "default_bob_eff")]
    pub bob_eff: [f64; 2],
    pub trials_per_pair: u64,
    #[serde(default = "default_true")]
    pub matched_only: bool,
    #[serde(default)]
    pub dark_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub measurement: MeasurementSource,
    /// Message alphabet sizes.
    #[serde(default = "default_d")]
    pub d: Vec<usize>,
    /// Efficiency at which the gain is optimized for the analysis.
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub eta_grid: EtaGrid,
    pub simulation: Option<SimulationBlock>,
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: CampaignConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that does not need the measurement set itself.
    pub fn validate(&self) -> Result<()> {
        let m = &self.measurement;
        let sources = [m.preset.is_some(), m.axes.is_some(), m.axes_csv.is_some(), m.probes_csv.is_some()];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(Error::invalid(
                "measurement needs exactly one of preset, axes, axes_csv, probes_csv",
            ));
        }
        if !(m.k_sigma >= 0.0) {
            return Err(Error::invalid("k_sigma must be >= 0"));
        }
        if self.d.is_empty() || self.d.contains(&0) {
            return Err(Error::invalid("d must list alphabet sizes >= 1"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        eta_grid(self.eta_grid.min, self.eta_grid.max, self.eta_grid.steps)?;
        if let Some(sim) = &self.simulation {
            if sim.trials_per_pair == 0 {
                return Err(Error::invalid("simulation needs trials_per_pair >= 1"));
            }
            if sim.bob_eff.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
                return Err(Error::invalid("Bob's efficiencies must lie in (0, 1]"));
            }
            let probe = ExperimentConfig::uniform(sim.mu, vec![crate::BlochVector::Z], sim.eta_a, 1.0, 1);
            ExperimentConfig { dark_prob: sim.dark_prob, ..probe }.validate()?;
        }
        Ok(())
    }

    fn resolve_measurement(&self) -> Result<MeasurementSet> {
        let m = &self.measurement;
        let set = if let Some(name) = &m.preset {
            MeasurementSet::preset(name)?
        } else if let Some(axes) = &m.axes {
            MeasurementSet::from_raw(axes, vec![0.0; axes.len()])?
        } else if let Some(path) = &m.axes_csv {
            read_axes_csv(path)?
        } else {
            let path = m.probes_csv.as_ref().expect("validated source");
            let probes = read_probes_csv(File::open(path)?)?;
            let cfg = BootstrapConfig { trials: m.bootstrap_trials, seed: self.seed, ..Default::default() };
            let est = bootstrap_tomography(&probes, &cfg)?;
            MeasurementSet::new(est.iter().map(|e| e.axis).collect(), est.iter().map(|e| e.sigma).collect())?
        };
        Ok(match m.sigma {
            Some(s) => set.with_sigmas(s),
            None => set,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct CampaignSummary {
    pub files: Vec<PathBuf>,
    pub optima: Vec<(usize, GainOptimum)>,
    pub reports: Vec<(usize, ResidualReport)>,
}

fn csv_file(path: &Path, head: &str) -> Result<csv::Writer<Box<dyn std::io::Write>>> {
    Ok(csv::WriterBuilder::new().flexible(true).from_writer(open_output(Some(path), head)?))
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignSummary> {
    cfg.validate()?;
    let base = cfg.resolve_measurement()?;
    if let Some(&d) = cfg.d.iter().find(|&&d| d > base.len() - 1) {
        return Err(Error::invalid(format!("d = {d} exceeds n − 1 = {}", base.len() - 1)));
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let head = |what: &str| header(&format!("campaign/{what}"), Some(cfg.seed), cfg);
    let mut summary = CampaignSummary::default();

    let path = cfg.output_dir.join("measurement.csv");
    let mut w = csv_file(&path, &head("measurement"))?;
    write_axes(&mut w, &base)?;
    w.flush()?;
    summary.files.push(path);

    let mut tables = Vec::new();
    for &d in &cfg.d {
        let set = if cfg.measurement.conservative {
            let res = if d == 1 {
                worst_case_no_message(&base, cfg.measurement.k_sigma)?
            } else {
                worst_case_one_bit(&base, cfg.measurement.k_sigma)?
            };
            let path = cfg.output_dir.join(format!("conservative_d{d}.csv"));
            let mut w = csv_file(&path, &head("conservative"))?;
            write_axes(&mut w, &res.rotated)?;
            w.flush()?;
            summary.files.push(path);
            res.rotated
        } else {
            base.clone()
        };
        tables.push((d, StrategyTable::build(&set, d)?));
    }

    let grid = eta_grid(cfg.eta_grid.min, cfg.eta_grid.max, cfg.eta_grid.steps)?;
    let path = cfg.output_dir.join("curve.csv");
    let mut w = csv_file(&path, &head("curve"))?;
    w.write_record(["d", "eta", "r", "h", "mu_min"])?;
    for (d, table) in &tables {
        for &eta in &grid {
            let g = table.optimal_gain(eta)?;
            w.write_record([d.to_string(), eta.to_string(), g.r.to_string(), g.h.to_string(), g.mu_min.to_string()])?;
        }
    }
    w.flush()?;
    summary.files.push(path);

    let path = cfg.output_dir.join("optimum.csv");
    let mut w = csv_file(&path, &head("optimum"))?;
    w.write_record(["d", "eta", "r", "h", "mu_min", "violable"])?;
    for (d, table) in &tables {
        let g = table.optimal_gain(cfg.eta)?;
        w.write_record([
            d.to_string(),
            g.eta.to_string(),
            g.r.to_string(),
            g.h.to_string(),
            g.mu_min.to_string(),
            g.violable().to_string(),
        ])?;
        summary.optima.push((*d, g));
    }
    w.flush()?;
    summary.files.push(path);

    if let Some(sim) = &cfg.simulation {
        let mut exp = ExperimentConfig::uniform(sim.mu, base.axes().to_vec(), sim.eta_a, 1.0, sim.trials_per_pair);
        exp.bob_eff = vec![sim.bob_eff; base.len()];
        exp.pairs = if sim.matched_only { PairSelection::Matched } else { PairSelection::All };
        exp.dark_prob = sim.dark_prob;
        exp.seed = cfg.seed;
        let counts = simulate(&exp)?;
        let path = cfg.output_dir.join("counts.csv");
        write_counts_csv(open_output(Some(&path), &head("counts"))?, &counts)?;
        summary.files.push(path);

        let ratios = vec![sim.bob_eff[0] / sim.bob_eff[1]; base.len()];
        let path = cfg.output_dir.join("analysis.csv");
        let mut w = csv_file(&path, &head("analysis"))?;
        w.write_record(REPORT_COLUMNS)?;
        for (d, g) in &summary.optima {
            let rep = estimate(&counts, &ratios, g.r, g.h)?;
            write_report(&mut w, &format!("d={d}"), &rep, None)?;
            summary.reports.push((*d, rep));
        }
        w.flush()?;
        summary.files.push(path);
    }
    Ok(summary)
}
