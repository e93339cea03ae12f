//! Coverage experiments: draw synthetic datasets from known input laws, build
//! intervals with every configured method and score them against the true
//! performance measure.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ci_methods::{
    bel, delta_method, eel, fel, linearized_el, percentile_bootstrap, run_batches, run_core,
    ElCore, ElPipelineState,
};
use crate::data::{BudgetPlan, ConfidenceInterval, InputDataset, Inputs, Method, PerformanceModel};
use crate::error::{Error, Result};
use crate::models::{preset, San, SanMode, TrueInputSpec};
use crate::par;
use crate::sampling::StreamKey;

pub const DEFAULT_BENCHMARK_RUNS: usize = 50_000;
const TRUTH_CHUNK: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Built-in preset name; mutually exclusive with `dag`.
    pub preset: Option<String>,
    /// Network file, relative to the config file.
    pub dag: Option<PathBuf>,
    /// `completion` (default) or `tail`.
    pub mode: Option<String>,
    pub threshold: Option<f64>,
    /// Exponential rates of the true input laws; defaults to the preset's.
    pub rates: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub value: Option<f64>,
    pub se: Option<f64>,
    pub oracle_n: Option<usize>,
    pub oracle_seed: Option<u64>,
    /// Accept a truth whose standard error exceeds 1% of the shortest mean
    /// interval length.
    #[serde(default)]
    pub allow_imprecise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodRow {
    pub method: Method,
    pub r1: Option<usize>,
    pub r2: Option<usize>,
    pub b: Option<usize>,
    pub rb: Option<usize>,
    pub rd: Option<usize>,
}

impl MethodRow {
    pub fn plan(&self) -> BudgetPlan {
        BudgetPlan {
            r1: self.r1,
            r2: self.r2,
            b: self.b,
            rb: self.rb,
            rd: self.rd,
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub model: ModelConfig,
    pub sizes: Vec<usize>,
    /// Number of synthetic datasets `K`.
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    pub total_budget: Option<usize>,
    /// Replace every budget by a large one to approximate coverage free of
    /// simulation error.
    #[serde(default)]
    pub benchmark: bool,
    pub benchmark_runs: Option<usize>,
    #[serde(default)]
    pub truth: TruthConfig,
    pub methods: Vec<MethodRow>,
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| Error::Config(e.message().to_string() + &span_hint(text, e.span())))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Schema-level invariants that do not need the model.
    pub fn check(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(config_err("replications", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err(
                "alpha",
                format!("{} outside (0, 1)", self.alpha),
            ));
        }
        if self.sizes.iter().any(|&n| n < 2) {
            return Err(config_err("sizes", "every data size must be at least 2"));
        }
        if self.methods.is_empty() {
            return Err(config_err("methods", "at least one method row is required"));
        }
        match (&self.model.preset, &self.model.dag) {
            (Some(_), Some(_)) => {
                return Err(config_err(
                    "model",
                    "set either 'preset' or 'dag', not both",
                ))
            }
            (None, None) => {
                return Err(config_err("model", "one of 'preset' or 'dag' is required"))
            }
            _ => {}
        }
        let t = &self.truth;
        if t.value.is_none() && t.oracle_n.is_none() {
            return Err(config_err(
                "truth",
                "either 'value' or 'oracle_n' is required",
            ));
        }
        if let Some(n) = t.oracle_n {
            if n < 1000 {
                return Err(config_err("truth.oracle_n", "must be at least 1000"));
            }
        }
        if let Some(0) = self.benchmark_runs {
            return Err(config_err("benchmark_runs", "must be positive"));
        }
        for (i, row) in self.methods.iter().enumerate() {
            let key = format!("methods[{i}]");
            row.plan()
                .check_for(row.method)
                .map_err(|e| config_err(&key, e))?;
            if row.method == Method::Boot {
                crate::ci_methods::bootstrap_ranks(row.b.unwrap_or(0), self.alpha)
                    .map_err(|e| config_err(&key, e))?;
            }
            if let (Some(total), false) = (self.total_budget, self.benchmark) {
                let uses = row.plan().total_runs(row.method);
                let checked = row.method != Method::Lel || row.r2.is_some();
                let uses = if row.method == Method::Lel {
                    uses + 2 * row.r2.unwrap_or(0)
                } else {
                    uses
                };
                if checked && uses != total {
                    return Err(config_err(
                        &key,
                        format!("uses {uses} runs but total_budget is {total}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Builds the model and true laws; `base` resolves a relative network path.
    pub fn resolve(&self, base: &Path) -> Result<ResolvedExperiment> {
        let m = &self.model;
        let (model, default_laws): (Arc<dyn PerformanceModel>, Option<TrueInputSpec>) =
            match (&m.preset, &m.dag) {
                (Some(name), None) => {
                    if m.mode.is_some() || m.threshold.is_some() {
                        return Err(config_err(
                            "model",
                            "'mode' and 'threshold' only apply to 'dag' models",
                        ));
                    }
                    let p = preset(name)?;
                    (Arc::from(p.build_model()), Some(p.truth_laws))
                }
                (None, Some(path)) => {
                    let dag = crate::io::read_dag(&base.join(path))?;
                    let mode = match (m.mode.as_deref().unwrap_or("completion"), m.threshold) {
                        ("completion", None) => SanMode::CompletionTime,
                        ("tail", Some(threshold)) => SanMode::TailIndicator { threshold },
                        ("tail", None) => {
                            return Err(config_err(
                                "model.threshold",
                                "required for mode = \"tail\"",
                            ))
                        }
                        ("completion", Some(_)) => {
                            return Err(config_err(
                                "model.threshold",
                                "only valid with mode = \"tail\"",
                            ))
                        }
                        (other, _) => {
                            return Err(config_err("model.mode", format!("unknown mode '{other}'")))
                        }
                    };
                    (Arc::new(San::new("dag", &dag, mode)?), None)
                }
                _ => unreachable!("checked by ExperimentConfig::check"),
            };
        let laws = match (&m.rates, default_laws) {
            (Some(rates), _) => {
                TrueInputSpec::exponential(rates).map_err(|e| config_err("model.rates", e))?
            }
            (None, Some(laws)) => laws,
            (None, None) => return Err(config_err("model.rates", "required for 'dag' models")),
        };
        if laws.num_models() != model.num_inputs() {
            return Err(config_err(
                "model.rates",
                format!(
                    "{} laws for a model with {} inputs",
                    laws.num_models(),
                    model.num_inputs()
                ),
            ));
        }
        if self.sizes.len() != model.num_inputs() {
            return Err(config_err(
                "sizes",
                format!(
                    "{} sizes for a model with {} inputs",
                    self.sizes.len(),
                    model.num_inputs()
                ),
            ));
        }
        let runs = self.benchmark_runs.unwrap_or(DEFAULT_BENCHMARK_RUNS);
        let rows = self
            .methods
            .iter()
            .map(|row| {
                let plan = if self.benchmark {
                    benchmark_plan(row.method, row.plan(), runs)
                } else {
                    row.plan()
                };
                RowSpec {
                    method: row.method,
                    plan,
                    params: params_label(row.method, &plan, self.benchmark),
                }
            })
            .collect();
        Ok(ResolvedExperiment {
            model,
            laws,
            sizes: self.sizes.clone(),
            replications: self.replications,
            alpha: self.alpha,
            seed: self.seed,
            truth: self.truth.clone(),
            rows,
        })
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => format!(
            " (line {})",
            text[..r.start.min(text.len())].matches('\n').count() + 1
        ),
        None => String::new(),
    }
}

fn benchmark_plan(method: Method, plan: BudgetPlan, runs: usize) -> BudgetPlan {
    match method {
        Method::Bel | Method::Eel | Method::Fel => BudgetPlan {
            r1: Some(runs),
            r2: Some(runs),
            ..plan
        },
        Method::Lel => BudgetPlan {
            r1: Some(runs),
            ..plan
        },
        Method::Boot => {
            let b = plan.b.unwrap_or(1);
            BudgetPlan {
                rb: Some(plan.rb.unwrap_or(1).max(runs.div_ceil(b))),
                ..plan
            }
        }
        Method::Delta => BudgetPlan {
            rd: Some(runs),
            ..plan
        },
    }
}

fn params_label(method: Method, plan: &BudgetPlan, benchmark: bool) -> String {
    let v = |x: Option<usize>| x.unwrap_or(0);
    let mut s = match method {
        Method::Bel | Method::Eel | Method::Fel => format!("R1={};R2={}", v(plan.r1), v(plan.r2)),
        Method::Lel => format!("R1={}", v(plan.r1)),
        Method::Boot => format!("B={};Rb={}", v(plan.b), v(plan.rb)),
        Method::Delta => format!("Rd={}", v(plan.rd)),
    };
    if benchmark {
        s.push_str(";benchmark");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowSpec {
    pub method: Method,
    pub plan: BudgetPlan,
    pub params: String,
}

pub struct ResolvedExperiment {
    pub model: Arc<dyn PerformanceModel>,
    pub laws: TrueInputSpec,
    pub sizes: Vec<usize>,
    pub replications: usize,
    pub alpha: f64,
    pub seed: u64,
    pub truth: TruthConfig,
    pub rows: Vec<RowSpec>,
}

/// Monte Carlo estimate of the performance measure under the true input laws:
/// `(mean, standard error)` from `n` independent runs.
pub fn estimate_truth(
    model: &dyn PerformanceModel,
    laws: &TrueInputSpec,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n < 1000 {
        return Err(Error::InvalidArgument(format!(
            "truth budget N = {n} must be at least 1000"
        )));
    }
    if laws.num_models() != model.num_inputs() {
        return Err(Error::ArityMismatch {
            expected: model.num_inputs(),
            found: laws.num_models(),
        });
    }
    let run_lengths = model.run_lengths().to_vec();
    let key = StreamKey::new(seed).child("truth", 0);
    let chunks = n.div_ceil(TRUTH_CHUNK);
    let indices: Vec<Vec<u32>> = run_lengths
        .iter()
        .map(|&t| (0..t as u32).collect())
        .collect();

    let partials: Vec<(f64, f64, f64)> = par::map_coarse(chunks, |c| {
        let len = TRUTH_CHUNK.min(n - c * TRUTH_CHUNK);
        let mut rng = key.child("chunk", c as u64).stream();
        let mut buf = InputDataset::scratch(&run_lengths);
        // Welford: exact for a constant output
        let (mut count, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for r in 0..len {
            for (i, law) in laws.laws.iter().enumerate() {
                buf.values_mut(i)
                    .iter_mut()
                    .for_each(|x| *x = law.sample(&mut rng));
            }
            let h = model
                .evaluate(&Inputs::new(&buf, &indices))
                .map_err(|reason| Error::ModelRejected {
                    replication: c * TRUTH_CHUNK + r,
                    reason,
                })?;
            if !h.is_finite() {
                return Err(Error::NonFiniteOutput {
                    replication: c * TRUTH_CHUNK + r,
                    value: h,
                });
            }
            count += 1.0;
            let d = h - mean;
            mean += d / count;
            m2 += d * (h - mean);
        }
        Ok((count, mean, m2))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let (mut count, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for (nb, mb, m2b) in partials {
        let total = count + nb;
        let d = mb - mean;
        mean += d * nb / total;
        m2 += m2b + d * d * count * nb / total;
        count = total;
    }
    Ok((mean, (m2 / (count - 1.0) / count).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthInfo {
    pub value: f64,
    pub se: Option<f64>,
    /// `fixed` when taken from the config, `oracle` when simulated.
    pub source: &'static str,
    pub oracle_n: Option<usize>,
    pub oracle_seed: Option<u64>,
}

/// Resolves the truth value, simulating it if the config does not pin one.
pub fn resolve_truth(exp: &ResolvedExperiment) -> Result<TruthInfo> {
    let t = &exp.truth;
    if let Some(value) = t.value {
        return Ok(TruthInfo {
            value,
            se: t.se,
            source: "fixed",
            oracle_n: t.oracle_n,
            oracle_seed: t.oracle_seed,
        });
    }
    let n = t.oracle_n.expect("checked by ExperimentConfig::check");
    let seed = t.oracle_seed.unwrap_or(exp.seed);
    let (value, se) = estimate_truth(exp.model.as_ref(), &exp.laws, n, seed)?;
    Ok(TruthInfo {
        value,
        se: Some(se),
        source: "oracle",
        oracle_n: Some(n),
        oracle_seed: Some(seed),
    })
}

/// One interval (or failure) for one dataset and one method row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub interval: std::result::Result<ConfidenceInterval, String>,
    pub secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: Method,
    pub params: String,
    pub coverage: f64,
    /// Binomial standard error `sqrt(p (1 - p) / K)` of the coverage.
    pub coverage_se: f64,
    pub mean_len: f64,
    pub std_len: f64,
    pub overshoot: f64,
    pub secs_per_ci: f64,
    pub failures: usize,
    pub crossed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutput {
    pub truth: TruthInfo,
    pub rows: Vec<ResultRow>,
    pub warnings: Vec<String>,
    /// `records[k][row]` for dataset `k`.
    #[serde(skip)]
    pub records: Vec<Vec<Outcome>>,
}

fn dataset_key(seed: u64, k: usize) -> StreamKey {
    StreamKey::new(seed).child("dataset", k as u64)
}

/// The `k`-th synthetic dataset of an experiment.
pub fn draw_replication_dataset(exp: &ResolvedExperiment, k: usize) -> Result<InputDataset> {
    exp.laws
        .draw_dataset(&exp.sizes, &dataset_key(exp.seed, k).child("data", 0))
}

type Timed<T> = (std::result::Result<T, String>, f64);

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Timed<T> {
    let t = Instant::now();
    let out = f().map_err(|e| e.to_string());
    (out, t.elapsed().as_secs_f64())
}

/// Builds every configured interval on one dataset. EL rows with the same
/// `R1` share the influence stage; rows with the same `(R1, R2)` share the
/// evaluation batches as well.
pub fn intervals_for_dataset(exp: &ResolvedExperiment, k: usize) -> Vec<Outcome> {
    let key = dataset_key(exp.seed, k);
    let model = exp.model.as_ref();
    let data = match draw_replication_dataset(exp, k) {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return exp
                .rows
                .iter()
                .map(|_| Outcome {
                    interval: Err(msg.clone()),
                    secs: 0.0,
                })
                .collect();
        }
    };
    let mut cores: HashMap<usize, Timed<ElCore>> = HashMap::new();
    let mut states: HashMap<(usize, usize), Timed<ElPipelineState>> = HashMap::new();

    exp.rows
        .iter()
        .enumerate()
        .map(|(idx, row)| {
            let plan = row.plan;
            // EL rows are charged the full cost of the stages they use, even
            // when those stages were computed for an earlier row.
            let (interval, secs) = if row.method.is_el() {
                let r1 = plan.r1.expect("validated");
                let (core, core_secs) = cores
                    .entry(r1)
                    .or_insert_with(|| timed(|| run_core(model, &data, exp.alpha, r1, &key)));
                match core {
                    Err(msg) => (Err(msg.clone()), *core_secs),
                    Ok(core) if row.method == Method::Lel => (Ok(linearized_el(core)), *core_secs),
                    Ok(core) => {
                        let r2 = plan.r2.expect("validated");
                        let (state, batch_secs) = states
                            .entry((r1, r2))
                            .or_insert_with(|| timed(|| run_batches(model, &data, core, r2, &key)));
                        let ci = match state {
                            Err(msg) => Err(msg.clone()),
                            Ok(state) => match row.method {
                                Method::Bel => Ok(bel(state)),
                                Method::Eel => eel(state, exp.alpha).map_err(|e| e.to_string()),
                                _ => fel(state, exp.alpha).map_err(|e| e.to_string()),
                            },
                        };
                        (ci, *core_secs + *batch_secs)
                    }
                }
            } else {
                let row_key = key.child("row", idx as u64);
                timed(|| match row.method {
                    Method::Boot => percentile_bootstrap(
                        model,
                        &data,
                        exp.alpha,
                        plan.b.expect("validated"),
                        plan.rb.expect("validated"),
                        &row_key,
                    ),
                    _ => delta_method(
                        model,
                        &data,
                        exp.alpha,
                        plan.rd.expect("validated"),
                        &row_key,
                    ),
                })
            };
            Outcome { interval, secs }
        })
        .collect()
}

pub fn run_experiment(exp: &ResolvedExperiment) -> Result<ExperimentOutput> {
    let truth = resolve_truth(exp)?;
    let records: Vec<Vec<Outcome>> =
        par::map_coarse(exp.replications, |k| intervals_for_dataset(exp, k));
    let range = exp.model.natural_range();
    let rows: Vec<ResultRow> = exp
        .rows
        .iter()
        .enumerate()
        .map(|(idx, spec)| aggregate(spec, records.iter().map(|r| &r[idx]), truth.value, range))
        .collect();

    let mut warnings = Vec::new();
    if let Some(se) = truth.se {
        let shortest = rows
            .iter()
            .map(|r| r.mean_len)
            .filter(|l| l.is_finite())
            .fold(f64::INFINITY, f64::min);
        if shortest.is_finite() && se > shortest / 100.0 && !exp.truth.allow_imprecise {
            warnings.push(format!(
                "truth standard error {se:.3e} exceeds 1% of the shortest mean interval length {shortest:.3e}"
            ));
        }
    }
    for r in &rows {
        if r.failures > 0 {
            warnings.push(format!(
                "{} {}: {} of {} intervals failed",
                r.method, r.params, r.failures, exp.replications
            ));
        }
    }
    Ok(ExperimentOutput {
        truth,
        rows,
        warnings,
        records,
    })
}

fn aggregate<'a>(
    spec: &RowSpec,
    outcomes: impl Iterator<Item = &'a Outcome>,
    truth: f64,
    range: Option<(f64, f64)>,
) -> ResultRow {
    let (mut ok, mut failures, mut crossed) = (0usize, 0usize, 0usize);
    let (mut covered, mut over, mut secs) = (0usize, 0usize, 0.0);
    let mut lengths = Vec::new();
    for o in outcomes {
        secs += o.secs;
        match &o.interval {
            Ok(ci) => {
                ok += 1;
                covered += usize::from(ci.covers(truth));
                over += usize::from(ci.overshoots(range));
                crossed += usize::from(ci.diagnostics.crossed);
                lengths.push(ci.length());
            }
            Err(_) => failures += 1,
        }
    }
    let n = ok as f64;
    let coverage = covered as f64 / n;
    let mean_len = lengths.iter().sum::<f64>() / n;
    let std_len = if ok > 1 {
        (lengths.iter().map(|l| (l - mean_len).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    ResultRow {
        method: spec.method,
        params: spec.params.clone(),
        coverage,
        coverage_se: (coverage * (1.0 - coverage) / n).sqrt(),
        mean_len,
        std_len,
        overshoot: over as f64 / n,
        secs_per_ci: secs / (ok + failures).max(1) as f64,
        failures,
        crossed,
    }
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if exp < -4 || exp >= digits as i32 {
        format!(
            "{}e{}{:02}",
            trim(mantissa.to_string()),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(format!("{x:.decimals$}"))
    }
}

pub const TABLE_HEADER: &str =
    "method,params,coverage,mean_len,std_len,overshoot,secs_per_ci,failures";

/// CSV text for `rows`; `stable` replaces the timing column by `NA`.
pub fn format_table(rows: &[ResultRow], stable: bool) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        let secs = if stable {
            "NA".to_string()
        } else {
            format_sig(r.secs_per_ci, 6)
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method,
            r.params,
            format_sig(r.coverage, 6),
            format_sig(r.mean_len, 6),
            format_sig(r.std_len, 6),
            format_sig(r.overshoot, 6),
            secs,
            r.failures
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn emit_table(rows: &[ResultRow], path: &Path, stable: bool) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no result rows to write".into()));
    }
    std::fs::write(path, format_table(rows, stable)).map_err(|e| Error::io(path, e))
}
