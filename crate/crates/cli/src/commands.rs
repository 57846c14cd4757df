use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::{json, Value};

use gmoe::em::{fit as em_fit, init_favourable, FitDoc};
use gmoe::experiments::sweep::{loss_report_csv, LossReportRow};
use gmoe::experiments::{
    fit_power_law, fit_rate, run_sweep, tv_distance, ExperimentConfig, LogLogPlot, ModelId, ModelSpec, PlotPoint, Profile, RateReport,
    TvMethod, CONFIG_SCHEMA,
};
use gmoe::model::{MeasureDoc, MixingMeasure};
use gmoe::polysys::{self, Candidate, Family, PolySystemSpec};
use gmoe::sampler::{sample, Dataset, DatasetMeta};
use gmoe::voronoi::{classify_setting, evaluate_loss};

use crate::output::OutputDir;
use crate::{CliError, Common};

type Measure = MixingMeasure<f64>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_flag<T: std::str::FromStr<Err = gmoe::Error>>(value: &str) -> Result<T, CliError> {
    value.parse().map_err(|e: gmoe::Error| usage(e.to_string()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn install_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    }
    Ok(())
}

fn output_dir(common: &Common) -> PathBuf {
    common.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

/// Reads `--config` (a config or a manifest), then applies the flag and
/// `--set` overrides. Returns `None` when neither `--config` nor `--model`
/// names a model.
fn resolve_config(common: &Common) -> Result<Option<ExperimentConfig>, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = read_text(path)?;
            let mut doc: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            if doc.get("manifest_version").is_some() {
                doc = doc
                    .get("config")
                    .cloned()
                    .filter(|c| !c.is_null())
                    .ok_or_else(|| usage(format!("{}: manifest carries no experiment config", path.display())))?;
            }
            let cfg: ExperimentConfig =
                serde_json::from_value(doc).map_err(|e| usage(format!("{}: {e}\n\n{CONFIG_SCHEMA}", path.display())))?;
            cfg
        }
        None => match &common.model {
            Some(m) => {
                let id: ModelId = parse_flag(m)?;
                let k = common.k.unwrap_or(id.measure::<f64>().len());
                ExperimentConfig::new(ModelSpec::Preset(id), k)
            }
            None => return Ok(None),
        },
    };
    if let Some(p) = &common.profile {
        cfg = cfg.with_profile(parse_flag::<Profile>(p)?);
    }
    if let Some(m) = &common.model {
        cfg.model = ModelSpec::Preset(parse_flag(m)?);
    }
    if let Some(k) = common.k {
        cfg.k = k;
    }
    if let Some(s) = common.seed {
        cfg.base_seed = s;
    }
    if let Some(l) = &common.loss {
        cfg.loss = parse_flag(l)?;
    }
    for kv in &common.overrides {
        let (key, value) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg = cfg.with_override(key.trim(), value.trim()).map_err(|e| usage(e.to_string()))?;
    }
    cfg.validate()?;
    Ok(Some(cfg))
}

fn require_config(common: &Common, what: &str) -> Result<ExperimentConfig, CliError> {
    resolve_config(common)?.ok_or_else(|| usage(format!("{what} needs --config or --model\n\n{CONFIG_SCHEMA}")))
}

/// A measure from a JSON file holding either a measure document or a fit result.
fn read_measure(path: &Path) -> Result<Measure, CliError> {
    let text = read_text(path)?;
    if let Ok(doc) = serde_json::from_str::<MeasureDoc>(&text) {
        return Ok(MixingMeasure::from_doc(&doc)?);
    }
    let fit: FitDoc = serde_json::from_str(&text).map_err(|e| usage(format!("{}: not a measure or fit document ({e})", path.display())))?;
    Ok(MixingMeasure::from_doc(&fit.measure)?)
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Number of pairs to draw.
    #[arg(long)]
    n: usize,
    /// Label stored in the sidecar (defaults to the model name).
    #[arg(long)]
    label: Option<String>,
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let cfg = require_config(&a.common, "simulate")?;
    let g0 = cfg.model.measure()?;
    let seed = cfg.base_seed;
    let mut ds = sample(&g0, a.n, seed);
    ds.source_label = a.label.clone().unwrap_or_else(|| cfg.model.label());
    let mut out = OutputDir::create(&output_dir(&a.common))?;
    out.write("data.csv", &ds.to_csv_bytes()?)?;
    out.write("data.json", gmoe::json::to_string(&ds.meta())?.as_bytes())?;
    let manifest = out.finish("simulate", serde_json::to_value(&cfg).map_err(gmoe::Error::from)?, json!({ "seed": seed }), a.common.threads)?;
    println!("wrote {} pairs (d = {}); manifest {}", ds.len(), ds.dim(), manifest.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset CSV; a sidecar with the same stem and `.json` extension is read if present.
    #[arg(long)]
    data: PathBuf,
    /// Start EM from this measure instead of the favourable initialization.
    #[arg(long)]
    init: Option<PathBuf>,
}

pub fn fit(a: FitArgs) -> Result<(), CliError> {
    let cfg = require_config(&a.common, "fit")?;
    let sidecar = a.data.with_extension("json");
    let meta: Option<DatasetMeta> = if sidecar.exists() {
        Some(serde_json::from_str(&read_text(&sidecar)?).map_err(|e| usage(format!("{}: {e}", sidecar.display())))?)
    } else {
        None
    };
    let file = fs::File::open(&a.data).map_err(|e| usage(format!("cannot read {}: {e}", a.data.display())))?;
    let ds = Dataset::<f64>::read_csv(file, meta.as_ref())?;
    let g0 = cfg.model.measure()?;
    let init_seed = gmoe::rng::derive_seed(cfg.base_seed, &[ds.len() as u64, 0, 1]);
    let init = match &a.init {
        Some(p) => read_measure(p)?,
        None => init_favourable(&g0, cfg.k, init_seed, cfg.perturb_sd, &cfg.em.floors())?,
    };
    let res = em_fit(&ds, cfg.k, &init, &cfg.em)?;
    let mut out = OutputDir::create(&output_dir(&a.common))?;
    out.write("fit.json", res.to_json()?.as_bytes())?;
    out.finish(
        "fit",
        serde_json::to_value(&cfg).map_err(gmoe::Error::from)?,
        json!({ "base_seed": cfg.base_seed, "init_seed": a.init.is_none().then_some(init_seed), "data_seed": ds.seed }),
        a.common.threads,
    )?;
    println!(
        "k = {}, iterations = {}, converged = {}, log-likelihood = {}",
        cfg.k,
        res.iterations,
        res.converged,
        gmoe::json::format_f64(res.final_loglik())
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[command(flatten)]
    common: Common,
    /// Fitted measure or fit.json.
    #[arg(long)]
    fitted: PathBuf,
    /// True measure file; defaults to the model of --model / --config.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Sample size label for the report row.
    #[arg(long, default_value_t = 0)]
    n: usize,
    /// Replication label for the report row.
    #[arg(long, default_value_t = 0)]
    rep: usize,
    /// Also estimate the TV distance: grid or mc.
    #[arg(long)]
    tv: Option<String>,
    /// Grid cells per axis, or Monte Carlo draws.
    #[arg(long)]
    tv_budget: Option<usize>,
}

pub fn loss(a: LossArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&a.common)?;
    let (g0, model_id) = match (&a.truth, &cfg) {
        (Some(p), _) => (read_measure(p)?, p.display().to_string()),
        (None, Some(c)) => (c.model.measure()?, c.model.label()),
        (None, None) => return Err(usage("loss needs --truth, --model or --config")),
    };
    let g = read_measure(&a.fitted)?;
    let zero_tol = cfg.as_ref().map_or(1e-12, |c| c.zero_tol);
    let orders = cfg.as_ref().map(|c| c.orders.clone()).unwrap_or_default();
    let choice = match &a.common.loss {
        Some(l) => parse_flag(l)?,
        None => cfg.as_ref().map(|c| c.loss).unwrap_or_default(),
    };
    let (kind, eval) = evaluate_loss(&g, &g0, gmoe::experiments::LossChoice::kind(choice), zero_tol, &orders)?;
    let row = LossReportRow {
        model_id: model_id.clone(),
        n: a.n,
        rep: a.rep,
        k: g.len(),
        loss_name: kind.name().to_string(),
        value: eval.value,
        cell_sizes: eval.assignment.cell_sizes(),
    };
    let tv = match &a.tv {
        Some(m) => {
            let method: TvMethod = parse_flag(m)?;
            let budget = a.tv_budget.unwrap_or(match method {
                TvMethod::Grid => 400,
                TvMethod::Mc => 200_000,
            });
            Some(tv_distance(&g, &g0, method, budget, a.common.seed.unwrap_or(0))?)
        }
        None => None,
    };
    let report = json!({
        "model_id": model_id,
        "setting": format!("{:?}", classify_setting(&g0, zero_tol).kind),
        "loss_name": kind.name(),
        "value": eval.value,
        "cell_sizes": row.cell_sizes,
        "tv": tv,
    });
    let text = gmoe::json::to_string(&report)?;
    if let Some(dir) = &a.common.output_dir {
        let mut out = OutputDir::create(dir)?;
        out.write("loss.csv", &loss_report_csv(&[row])?)?;
        out.write("loss.json", text.as_bytes())?;
        out.finish(
            "loss",
            cfg.as_ref().map_or(Ok(Value::Null), serde_json::to_value).map_err(gmoe::Error::from)?,
            json!({ "tv_seed": a.common.seed }),
            a.common.threads,
        )?;
    }
    print!("{text}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    common: Common,
}

pub fn sweep(a: SweepArgs) -> Result<(), CliError> {
    if a.common.config.is_none() {
        return Err(usage(format!("sweep needs --config FILE\n\n{CONFIG_SCHEMA}")));
    }
    let cfg = require_config(&a.common, "sweep")?;
    install_threads(a.common.threads)?;
    let res = run_sweep(&cfg)?;
    let mut out = OutputDir::create(&output_dir(&a.common))?;
    out.write("results.csv", &res.results_csv()?)?;
    out.write("summary.csv", &res.summary_csv()?)?;
    out.write("losses.csv", &res.loss_report_csv()?)?;
    let fit = match fit_rate(&res) {
        Ok(f) => {
            out.write("rate.json", gmoe::json::to_string(&RateReport::new(&res, &f))?.as_bytes())?;
            println!("slope {:.4} (R² {:.4}) over {} sizes", f.slope, f.r_squared, f.points);
            Some(f)
        }
        Err(e) => {
            eprintln!("warning: no rate fit: {e}");
            None
        }
    };
    out.write("plot.svg", LogLogPlot::from_sweep(&res, fit).to_svg().as_bytes())?;
    out.finish(
        "sweep",
        serde_json::to_value(&cfg).map_err(gmoe::Error::from)?,
        json!({ "base_seed": cfg.base_seed }),
        a.common.threads,
    )?;
    println!(
        "{} rows ({} excluded: {} unsupported order, {} degenerate; {} not converged)",
        res.rows.len(),
        res.excluded_unsupported + res.excluded_degenerate,
        res.excluded_unsupported,
        res.excluded_degenerate,
        res.nonconverged
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[command(flatten)]
    common: Common,
    /// summary.csv from a sweep, or the directory holding it.
    #[arg(long)]
    summary: PathBuf,
}

pub fn rate(a: RateArgs) -> Result<(), CliError> {
    let path = if a.summary.is_dir() { a.summary.join("summary.csv") } else { a.summary.clone() };
    let file = fs::File::open(&path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut points = Vec::new();
    for rec in reader.deserialize::<(usize, f64, f64, usize)>() {
        let (n, mean, stderr, _count) = rec.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        points.push(PlotPoint { n: n as f64, mean, stderr });
    }
    let ns: Vec<f64> = points.iter().map(|p| p.n).collect();
    let means: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let fit = fit_power_law(&ns, &means)?;
    let dir = a
        .common
        .output_dir
        .clone()
        .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")));
    let mut out = OutputDir::create(&dir)?;
    let text = gmoe::json::to_string(&fit)?;
    out.write("rate.json", text.as_bytes())?;
    let plot = LogLogPlot {
        title: "rate fit".into(),
        y_label: "mean loss".into(),
        points,
        fit: Some(fit),
    };
    out.write("plot.svg", plot.to_svg().as_bytes())?;
    out.finish("rate", json!({ "summary": path.display().to_string() }), Value::Null, a.common.threads)?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct PolysysArgs {
    #[command(flatten)]
    common: Common,
    /// rbar or rtilde.
    #[arg(long)]
    family: String,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    r: usize,
    /// Verify a named candidate: builtin-c3 or builtin-c3-printed.
    #[arg(long, conflicts_with_all = ["candidate", "search"])]
    verify: Option<String>,
    /// Verify a candidate file `{"p": [...], "q": [[q1..q5], ...]}`.
    #[arg(long, conflicts_with = "search")]
    candidate: Option<PathBuf>,
    /// Multi-start search for a nontrivial solution.
    #[arg(long)]
    search: bool,
    #[arg(long, default_value_t = 200)]
    restarts: usize,
    /// Residual tolerance for calling a candidate a solution.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

pub fn polysys(a: PolysysArgs) -> Result<(), CliError> {
    let family: Family = parse_flag(&a.family)?;
    let spec = PolySystemSpec::new(family, a.m, a.r)?;
    let seed = a.common.seed.unwrap_or(0);
    let report = if a.search {
        install_threads(a.common.threads)?;
        polysys::search_report(&spec, a.restarts, seed, a.tol)?
    } else {
        let cand: Candidate<f64> = match (&a.verify, &a.candidate) {
            (Some(name), _) => polysys::builtin_candidate(name, family, a.m)?,
            (None, Some(p)) => serde_json::from_str(&read_text(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
            (None, None) => return Err(usage("polysys needs --verify NAME, --candidate FILE or --search")),
        };
        polysys::report(&spec, &cand, a.tol)?
    };
    let text = gmoe::json::to_string(&report)?;
    if let Some(dir) = &a.common.output_dir {
        let mut out = OutputDir::create(dir)?;
        out.write("polysys.json", text.as_bytes())?;
        out.finish(
            "polysys",
            json!({ "family": family, "m": a.m, "r": a.r, "restarts": a.search.then_some(a.restarts), "tol": a.tol }),
            json!({ "seed": seed }),
            a.common.threads,
        )?;
    }
    print!("{text}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct PresetsArgs {
    #[command(flatten)]
    common: Common,
    /// Preset to print; lists all presets when omitted.
    #[arg(long)]
    id: Option<String>,
}

pub fn presets(a: PresetsArgs) -> Result<(), CliError> {
    match a.id.as_deref().or(a.common.model.as_deref()) {
        Some(id) => {
            let id: ModelId = id.parse().map_err(|e: gmoe::Error| CliError::Domain(e))?;
            print!("{}", id.measure::<f64>().to_json()?);
        }
        None => {
            for id in ModelId::ALL {
                let g: Measure = id.measure();
                println!("{id}\td={}\tk0={}\t{:?}", g.dim(), g.len(), classify_setting(&g, 1e-12).kind);
            }
        }
    }
    Ok(())
}
