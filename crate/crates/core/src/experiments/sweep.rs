//! Sample-size sweeps: sample, initialize, fit and score every `(n, rep)` cell.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::presets::ModelId;
use crate::em::{fit, init_favourable, EmSettings};
use crate::json::format_f64;
use crate::model::{MeasureDoc, MixingMeasure};
use crate::rng::derive_seed;
use crate::sampler::sample;
use crate::voronoi::{classify_setting, evaluate_loss, LossKind, OrderTable, SettingKind};
use crate::{Error, Result};

/// Seed stream tags mixed into [`derive_seed`] next to `(n, rep)`.
const STREAM_SAMPLE: u64 = 0;
const STREAM_INIT: u64 = 1;

/// `points` integers log-spaced over `[lo, hi]`, rounded to nearest.
pub fn log_spaced(lo: usize, hi: usize, points: usize) -> Vec<usize> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp().round() as usize)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 20 sizes in `[10², 10⁴]`, 10 replications.
    Desk,
    /// 100 sizes in `[10², 10⁵]`, 20 replications.
    Paper,
}

impl Profile {
    pub fn n_grid(self) -> Vec<usize> {
        match self {
            Profile::Desk => log_spaced(100, 10_000, 20),
            Profile::Paper => log_spaced(100, 100_000, 100),
        }
    }

    pub fn reps(self) -> usize {
        match self {
            Profile::Desk => 10,
            Profile::Paper => 20,
        }
    }
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Parse(format!("unknown profile '{other}' (expected desk or paper)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossChoice {
    Dbar,
    Dtilde,
    #[default]
    Auto,
}

impl LossChoice {
    pub fn kind(self) -> Option<LossKind> {
        match self {
            LossChoice::Dbar => Some(LossKind::Dbar),
            LossChoice::Dtilde => Some(LossKind::Dtilde),
            LossChoice::Auto => None,
        }
    }
}

impl FromStr for LossChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dbar" => Ok(LossChoice::Dbar),
            "dtilde" => Ok(LossChoice::Dtilde),
            "auto" => Ok(LossChoice::Auto),
            other => Err(Error::Parse(format!("unknown loss '{other}' (expected dbar, dtilde or auto)"))),
        }
    }
}

/// A preset name or an inline measure document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset(ModelId),
    Inline(MeasureDoc),
}

impl ModelSpec {
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Preset(id) => id.name().to_string(),
            ModelSpec::Inline(_) => "inline".to_string(),
        }
    }

    pub fn measure(&self) -> Result<MixingMeasure<f64>> {
        match self {
            ModelSpec::Preset(id) => Ok(id.measure()),
            ModelSpec::Inline(doc) => MixingMeasure::from_doc(doc),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn default_n_grid() -> Vec<usize> {
    Profile::Paper.n_grid()
}
fn default_reps() -> usize {
    Profile::Paper.reps()
}
fn default_perturb_sd() -> f64 {
    0.01
}
fn default_zero_tol() -> f64 {
    1e-12
}

/// Field summary printed when a command needs a config and none was given.
pub const CONFIG_SCHEMA: &str = r#"experiment config (JSON object):
  model       "model1".."model4", or an inline measure {"dim", "atoms": [{"weight","c","gamma","a","b","nu"}]}   (required)
  k           fitted number of atoms, at least the true number                                                   (required)
  n_grid      strictly increasing sample sizes            default: 100 log-spaced sizes in [100, 100000]
  reps        replications per sample size                default: 20
  base_seed   root of every derived seed                  default: 0
  em          {"epsilon","max_iter","lambda_floor","nu_floor","beta_floor"}   default: 1e-5, 2000, 1e-8, 1e-8, 0
  loss        "dbar" | "dtilde" | "auto"                  default: "auto"
  perturb_sd  sd of the initialization noise              default: 0.01
  zero_tol    norm below which a true location is zero    default: 1e-12
  orders      {"rbar": {"4": r}, "rtilde": {"4": r}}      asserted orders for larger cells, default: none"#;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub k: usize,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub em: EmSettings<f64>,
    #[serde(default)]
    pub loss: LossChoice,
    #[serde(default = "default_perturb_sd")]
    pub perturb_sd: f64,
    #[serde(default = "default_zero_tol")]
    pub zero_tol: f64,
    #[serde(default)]
    pub orders: OrderTable,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, k: usize) -> Self {
        Self {
            model,
            k,
            n_grid: default_n_grid(),
            reps: default_reps(),
            base_seed: 0,
            em: EmSettings::default(),
            loss: LossChoice::Auto,
            perturb_sd: default_perturb_sd(),
            zero_tol: default_zero_tol(),
            orders: OrderTable::default(),
        }
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        self.n_grid = profile.n_grid();
        self.reps = profile.reps();
        self
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }

    pub fn validate(&self) -> Result<()> {
        let g0 = self.model.measure()?;
        if self.k < g0.len() {
            return Err(Error::invalid(format!("k = {} is smaller than the true order {}", self.k, g0.len())));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("n_grid must be non-empty, positive and strictly increasing"));
        }
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if !(self.perturb_sd >= 0.0) || !self.perturb_sd.is_finite() {
            return Err(Error::invalid("perturb_sd must be finite and non-negative"));
        }
        if !(self.zero_tol >= 0.0) {
            return Err(Error::invalid("zero_tol must be non-negative"));
        }
        self.em.validate()
    }

    /// Applies a `key=value` override; nested keys use dots (`em.max_iter`).
    /// The value is read as JSON when it parses, otherwise as a string.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        let parsed = serde_json::from_str::<Value>(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Parse(format!("unknown config key '{key}'")))?;
        }
        *slot = parsed;
        let cfg: Self = serde_json::from_value(doc).map_err(|e| Error::Parse(format!("override {key}={value}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Why a row does not enter the per-`n` aggregates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exclusion {
    /// An over-fitted cell too large for the known exponent table.
    UnsupportedOrder,
    /// EM lost an atom.
    DegenerateFit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub model: String,
    pub k: usize,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub loss_name: &'static str,
    pub loss: f64,
    pub loglik: f64,
    pub iters: usize,
    pub converged: bool,
    pub max_cell: usize,
    pub cell_sizes: Vec<usize>,
    pub exclusion: Option<Exclusion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub mean_loss: f64,
    pub stderr: f64,
    pub count: usize,
    pub nonconverged: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
    pub excluded_unsupported: usize,
    pub excluded_degenerate: usize,
    pub nonconverged: usize,
}

/// Floats in CSV: 17 significant digits, `NaN` for missing values.
pub fn csv_float(v: f64) -> String {
    if v.is_finite() {
        format_f64(v)
    } else {
        format!("{v}")
    }
}

impl SweepResult {
    pub fn loss_name(&self) -> &'static str {
        self.rows.first().map_or("", |r| r.loss_name)
    }

    pub fn results_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "k", "n", "rep", "seed", "loss_name", "loss", "loglik", "iters", "converged", "max_cell", "excluded"])?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.k.to_string(),
                r.n.to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
                r.loss_name.to_string(),
                csv_float(r.loss),
                csv_float(r.loglik),
                r.iters.to_string(),
                r.converged.to_string(),
                r.max_cell.to_string(),
                r.exclusion.is_some().to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn summary_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["n", "mean_loss", "stderr", "count"])?;
        for s in &self.summary {
            w.write_record([s.n.to_string(), csv_float(s.mean_loss), csv_float(s.stderr), s.count.to_string()])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    /// Loss report rows: `model_id,n,rep,k,loss_name,value,cell_sizes`.
    pub fn loss_report_csv(&self) -> Result<Vec<u8>> {
        let rows: Vec<LossReportRow> = self
            .rows
            .iter()
            .map(|r| LossReportRow {
                model_id: r.model.clone(),
                n: r.n,
                rep: r.rep,
                k: r.k,
                loss_name: r.loss_name.to_string(),
                value: r.loss,
                cell_sizes: r.cell_sizes.clone(),
            })
            .collect();
        loss_report_csv(&rows)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReportRow {
    pub model_id: String,
    pub n: usize,
    pub rep: usize,
    pub k: usize,
    pub loss_name: String,
    pub value: f64,
    pub cell_sizes: Vec<usize>,
}

/// Cell sizes are written space-separated in true-atom order.
pub fn loss_report_csv(rows: &[LossReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_id", "n", "rep", "k", "loss_name", "value", "cell_sizes"])?;
    for r in rows {
        let cells: Vec<String> = r.cell_sizes.iter().map(ToString::to_string).collect();
        w.write_record([
            r.model_id.clone(),
            r.n.to_string(),
            r.rep.to_string(),
            r.k.to_string(),
            r.loss_name.clone(),
            csv_float(r.value),
            cells.join(" "),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Seed of the dataset drawn for `(n, rep)`.
pub fn sample_seed(base_seed: u64, n: usize, rep: usize) -> u64 {
    derive_seed(base_seed, &[n as u64, rep as u64, STREAM_SAMPLE])
}

/// Seed of the initialization for `(n, rep)`.
pub fn init_seed(base_seed: u64, n: usize, rep: usize) -> u64 {
    derive_seed(base_seed, &[n as u64, rep as u64, STREAM_INIT])
}

/// Runs every `(n, rep)` cell on the current rayon pool. Rows come back in
/// `(n-index, rep)` order whatever the pool width.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let g0 = cfg.model.measure()?;
    let kind = cfg.loss.kind().unwrap_or(match classify_setting(&g0, cfg.zero_tol).kind {
        SettingKind::TypeI => LossKind::Dbar,
        SettingKind::TypeII => LossKind::Dtilde,
    });
    let tasks: Vec<(usize, usize)> = cfg.n_grid.iter().flat_map(|&n| (0..cfg.reps).map(move |rep| (n, rep))).collect();
    let rows = tasks
        .par_iter()
        .map(|&(n, rep)| run_cell(cfg, &g0, kind, n, rep))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(cfg.clone(), rows))
}

/// [`run_sweep`] on a dedicated pool of `threads` workers.
pub fn run_sweep_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    pool.install(|| run_sweep(cfg))
}

fn run_cell(cfg: &ExperimentConfig, g0: &MixingMeasure<f64>, kind: LossKind, n: usize, rep: usize) -> Result<SweepRow> {
    let seed = sample_seed(cfg.base_seed, n, rep);
    let data = sample(g0, n, seed);
    let init = init_favourable(g0, cfg.k, init_seed(cfg.base_seed, n, rep), cfg.perturb_sd, &cfg.em.floors())?;
    let mut row = SweepRow {
        model: cfg.model.label(),
        k: cfg.k,
        n,
        rep,
        seed,
        loss_name: kind.name(),
        loss: f64::NAN,
        loglik: f64::NAN,
        iters: 0,
        converged: false,
        max_cell: 0,
        cell_sizes: Vec::new(),
        exclusion: None,
    };
    let fitted = match fit(&data, cfg.k, &init, &cfg.em) {
        Ok(f) => f,
        Err(Error::DegenerateComponent { iteration, .. }) => {
            row.iters = iteration.unwrap_or(0);
            row.exclusion = Some(Exclusion::DegenerateFit);
            return Ok(row);
        }
        Err(e) => return Err(e),
    };
    row.loglik = fitted.final_loglik();
    row.iters = fitted.iterations;
    row.converged = fitted.converged;
    let assignment = crate::voronoi::assign_cells(&fitted.g_hat, g0)?;
    row.cell_sizes = assignment.cell_sizes();
    row.max_cell = assignment.max_cell();
    match evaluate_loss(&fitted.g_hat, g0, Some(kind), cfg.zero_tol, &cfg.orders) {
        Ok((_, eval)) => row.loss = eval.value,
        Err(Error::UnsupportedOrder { .. }) => row.exclusion = Some(Exclusion::UnsupportedOrder),
        Err(e) => return Err(e),
    }
    Ok(row)
}

fn aggregate(config: ExperimentConfig, rows: Vec<SweepRow>) -> SweepResult {
    let summary = config
        .n_grid
        .iter()
        .map(|&n| {
            let kept: Vec<&SweepRow> = rows.iter().filter(|r| r.n == n && r.exclusion.is_none()).collect();
            let values: Vec<f64> = kept.iter().map(|r| r.loss).collect();
            let (mean_loss, stderr) = mean_and_stderr(&values);
            SummaryRow {
                n,
                mean_loss,
                stderr,
                count: values.len(),
                nonconverged: kept.iter().filter(|r| !r.converged).count(),
            }
        })
        .collect();
    let count = |e: Exclusion| rows.iter().filter(|r| r.exclusion == Some(e)).count();
    SweepResult {
        excluded_unsupported: count(Exclusion::UnsupportedOrder),
        excluded_degenerate: count(Exclusion::DegenerateFit),
        nonconverged: rows.iter().filter(|r| r.exclusion.is_none() && !r.converged).count(),
        config,
        rows,
        summary,
    }
}

/// Sample mean and standard error (`s / √count`); `NaN` where undefined.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let count = values.len();
    if count == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    if count == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
    (mean, (var / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(model: ModelId, k: usize) -> ExperimentConfig {
        ExperimentConfig {
            n_grid: vec![100, 400],
            reps: 2,
            base_seed: 5,
            ..ExperimentConfig::new(ModelSpec::Preset(model), k)
        }
    }

    #[test]
    fn profiles() {
        let desk = Profile::Desk.n_grid();
        assert_eq!((desk.len(), desk[0], desk[19]), (20, 100, 10_000));
        let paper = Profile::Paper.n_grid();
        assert_eq!((paper.len(), paper[0], paper[99]), (100, 100, 100_000));
        assert!(paper.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"model": "model2", "k": 4}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::new(ModelSpec::Preset(ModelId::Model2), 4));
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_rejects_bad_input() {
        assert!(ExperimentConfig::from_json(r#"{"model": "model1", "k": 2}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"model": "model1", "k": 3, "n_grid": [200, 100]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"model": "model1", "k": 3, "typo": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"model": "model7", "k": 3}"#).is_err());
    }

    #[test]
    fn inline_model() {
        let doc = ModelId::Model1.measure::<f64>().to_doc();
        let json = format!(r#"{{"model": {}, "k": 3}}"#, serde_json::to_string(&doc).unwrap());
        let cfg = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(cfg.model.label(), "inline");
        assert_eq!(cfg.model.measure().unwrap(), ModelId::Model1.measure());
    }

    #[test]
    fn overrides() {
        let cfg = small(ModelId::Model1, 3);
        let o = cfg.with_override("em.max_iter", "50").unwrap().with_override("loss", "dtilde").unwrap();
        assert_eq!(o.em.max_iter, 50);
        assert_eq!(o.loss, LossChoice::Dtilde);
        assert_eq!(o.with_override("model", "model3").unwrap().model, ModelSpec::Preset(ModelId::Model3));
        assert!(cfg.with_override("nope", "1").is_err());
        assert!(cfg.with_override("k", "1").is_err());
    }

    #[test]
    fn smoke_single_row() {
        let cfg = ExperimentConfig {
            n_grid: vec![100],
            reps: 1,
            ..small(ModelId::Model1, 3)
        };
        let res = run_sweep(&cfg).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert!(res.rows[0].loss.is_finite());
        assert_eq!(res.rows[0].loss_name, "dbar");
    }

    #[test]
    fn deterministic_across_pool_widths() {
        let cfg = small(ModelId::Model2, 4);
        let one = run_sweep_with_threads(&cfg, 1).unwrap();
        let three = run_sweep_with_threads(&cfg, 3).unwrap();
        assert_eq!(one.results_csv().unwrap(), three.results_csv().unwrap());
        assert_eq!(one.rows.len(), 4);
        assert!(one.rows.iter().all(|r| r.loss_name == "dtilde"));
    }

    #[test]
    fn summary_ignores_excluded_rows() {
        let cfg = small(ModelId::Model1, 3);
        let mk = |n, loss, exclusion| SweepRow {
            model: "model1".into(),
            k: 3,
            n,
            rep: 0,
            seed: 0,
            loss_name: "dbar",
            loss,
            loglik: 0.0,
            iters: 1,
            converged: true,
            max_cell: 1,
            cell_sizes: vec![1, 1, 1],
            exclusion,
        };
        let res = aggregate(
            cfg,
            vec![mk(100, 1.0, None), mk(100, 3.0, None), mk(100, f64::NAN, Some(Exclusion::UnsupportedOrder)), mk(400, 2.0, None)],
        );
        assert_eq!(res.summary[0].count, 2);
        assert_eq!(res.summary[0].mean_loss, 2.0);
        assert_eq!(res.summary[0].stderr, 1.0);
        assert!(res.summary[1].stderr.is_nan());
        assert_eq!(res.excluded_unsupported, 1);
        let text = String::from_utf8(res.summary_csv().unwrap()).unwrap();
        assert!(text.starts_with("n,mean_loss,stderr,count\n100,2.0000000000000000e0,1.0000000000000000e0,2\n"));
    }
}
