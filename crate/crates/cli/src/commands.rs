use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use elsim_core::ci_methods::{bootstrap_ranks, run_core};
use elsim_core::experiments::{
    emit_table, estimate_truth, run_experiment, ExperimentConfig, ResultRow, TruthInfo,
};
use elsim_core::io;
use elsim_core::models::{preset, San, SanMode, PRESET_NAMES};
use elsim_core::{
    bel, delta_method, eel, fel, linearized_el, percentile_bootstrap, run_pipeline_keyed, validate,
    BudgetPlan, ConfidenceInterval, ElSolution, Method, PerformanceModel, ProbabilityWeights,
    StreamKey, UncertaintySetSpec,
};

use crate::manifest::{write_json, RunManifest};

const RESULTS_CSV: &str = "results.csv";
const RESULTS_JSON: &str = "results.json";
const MANIFEST_JSON: &str = "manifest.json";
use crate::{CiArgs, DrawDataArgs, ExperimentArgs, ModelArgs, RunArgs, SolveArgs, TruthArgs};

const DEFAULT_TRUTH_RUNS: usize = 1_000_000;

/// Runs `f` on a pool of `workers` threads, or on the global pool.
fn with_pool<T: Send>(run: &RunArgs, f: impl FnOnce() -> T + Send) -> Result<(T, usize)> {
    match run.workers {
        Some(0) => bail!("--workers must be at least 1"),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok((pool.install(f), n))
        }
        None => Ok((f(), rayon::current_num_threads())),
    }
}

fn load_model(args: &ModelArgs) -> Result<Box<dyn PerformanceModel>> {
    if PRESET_NAMES.contains(&args.model.as_str()) {
        if args.threshold.is_some() {
            bail!("--threshold only applies to network files; use the san14_tail preset for the built-in tail model");
        }
        return Ok(preset(&args.model)?.build_model());
    }
    let path = Path::new(&args.model);
    if !path.exists() {
        bail!(
            "unknown model '{}': not a preset ({}) and no such network file",
            args.model,
            PRESET_NAMES.join(", ")
        );
    }
    let dag = io::read_dag(path)?;
    let mode = match args.threshold {
        Some(threshold) => SanMode::TailIndicator { threshold },
        None => SanMode::CompletionTime,
    };
    Ok(Box::new(San::new(args.model.clone(), &dag, mode)?))
}

#[derive(Serialize)]
struct WeightSummary {
    /// Per input model, the smallest and largest `n_i w_ij`.
    scaled_range: Vec<(f64, f64)>,
}

impl WeightSummary {
    fn of(w: &ProbabilityWeights) -> Self {
        let scaled_range = w
            .as_slices()
            .iter()
            .map(|row| {
                let n = row.len() as f64;
                row.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                        (lo.min(n * x), hi.max(n * x))
                    })
            })
            .collect();
        Self { scaled_range }
    }
}

fn solution_summary(sol: &ElSolution) -> serde_json::Value {
    json!({
        "degenerate": sol.degenerate,
        "chi2": sol.chi2,
        "obj_min": sol.obj_min,
        "obj_max": sol.obj_max,
        "beta_min": sol.beta_min,
        "beta_max": sol.beta_max,
        "weights_min": WeightSummary::of(&sol.w_min),
        "weights_max": WeightSummary::of(&sol.w_max),
    })
}

pub fn ci(args: CiArgs) -> Result<()> {
    let (started, t0) = (SystemTime::now(), Instant::now());
    let model = load_model(&args.model)?;
    let data = io::read_dataset_dir(&args.data, model.num_inputs())?;
    validate(&data, model.as_ref())?;
    let method = Method::from(args.method);
    let plan = BudgetPlan {
        r1: args.r1,
        r2: args.r2,
        b: args.b,
        rb: args.rb,
        rd: args.rd,
    };
    plan.check_for(method)?;
    if method == Method::Boot {
        bootstrap_ranks(args.b.unwrap_or(0), args.alpha)?;
    }
    let key = StreamKey::new(args.seed);
    let model = model.as_ref();
    let alpha = args.alpha;

    let (result, workers) = with_pool(
        &args.run,
        || -> elsim_core::Result<(ConfidenceInterval, Option<ElSolution>)> {
            let (r1, r2) = (plan.r1.unwrap_or(0), plan.r2.unwrap_or(0));
            Ok(match method {
                Method::Bel | Method::Eel | Method::Fel => {
                    let state = run_pipeline_keyed(model, &data, alpha, r1, r2, &key)?;
                    let ci = match method {
                        Method::Bel => bel(&state),
                        Method::Eel => eel(&state, alpha)?,
                        _ => fel(&state, alpha)?,
                    };
                    (ci, Some(state.core.solution))
                }
                Method::Lel => {
                    let core = run_core(model, &data, alpha, r1, &key)?;
                    (linearized_el(&core), Some(core.solution))
                }
                Method::Boot => (
                    percentile_bootstrap(
                        model,
                        &data,
                        alpha,
                        plan.b.unwrap_or(0),
                        plan.rb.unwrap_or(0),
                        &key,
                    )?,
                    None,
                ),
                Method::Delta => (
                    delta_method(model, &data, alpha, plan.rd.unwrap_or(0), &key)?,
                    None,
                ),
            })
        },
    )?;
    let (interval, solution) = result?;
    println!("{},{}", interval.lower, interval.upper);

    let config = json!({
        "model": args.model.model,
        "threshold": args.model.threshold,
        "data": args.data,
        "sizes": data.sizes(),
        "alpha": alpha,
        "method": method,
        "budgets": plan,
        "seed": args.seed,
    });
    let mut manifest = RunManifest::new("ci", args.seed, config);
    manifest.outputs.push(args.out.clone());
    manifest.finish(started, t0.elapsed(), workers, args.run.stable_output);
    let doc = json!({
        "interval": interval,
        "solution": solution.as_ref().map(solution_summary),
        "manifest": manifest,
    });
    write_json(&args.out, &doc)
}

fn join(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn solve(args: SolveArgs) -> Result<()> {
    let coeffs = io::read_coefficients(&args.coeffs)?;
    let spec = UncertaintySetSpec::new(args.alpha, coeffs.iter().map(Vec::len).collect())?;
    let sol = elsim_core::el_solver::solve_weights_with(&coeffs, &spec, &Default::default())?;
    if sol.degenerate {
        println!("degenerate min={} max={}", sol.obj_min, sol.obj_max);
    } else {
        println!("min={} max={}", sol.obj_min, sol.obj_max);
    }
    println!("beta_min={} beta_max={}", sol.beta_min, sol.beta_max);
    println!("lambda_min={}", join(&sol.lambdas_min));
    println!("lambda_max={}", join(&sol.lambdas_max));
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    for (name, w) in [
        ("weights_min.csv", &sol.w_min),
        ("weights_max.csv", &sol.w_max),
    ] {
        io::write_weights(&args.out_dir.join(name), w)?;
    }
    Ok(())
}

fn config_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Serialize)]
struct ResultsDocument<'a> {
    name: Option<&'a str>,
    truth: &'a TruthInfo,
    rows: Vec<ResultRow>,
    warnings: &'a [String],
}

pub fn experiment(args: ExperimentArgs) -> Result<()> {
    let (started, t0) = (SystemTime::now(), Instant::now());
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(k) = args.replications {
        config.replications = k;
        config.check()?;
    }
    let exp = config.resolve(&config_base(&args.config))?;
    let (output, workers) = with_pool(&args.run, || run_experiment(&exp))?;
    let output = output?;
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let csv = args.out.join(RESULTS_CSV);
    let json_path = args.out.join(RESULTS_JSON);
    let manifest_path = args.out.join(MANIFEST_JSON);
    emit_table(&output.rows, &csv, args.run.stable_output)?;
    let mut rows = output.rows.clone();
    if args.run.stable_output {
        rows.iter_mut().for_each(|r| r.secs_per_ci = f64::NAN);
    }
    write_json(
        &json_path,
        &ResultsDocument {
            name: config.name.as_deref(),
            truth: &output.truth,
            rows,
            warnings: &output.warnings,
        },
    )?;

    let resolved = json!({ "experiment": config, "truth": output.truth, "rows": exp.rows });
    let mut manifest = RunManifest::new("experiment", config.seed, resolved);
    // relative to the output directory, so equal runs give equal manifests
    manifest.outputs = [RESULTS_CSV, RESULTS_JSON, MANIFEST_JSON]
        .map(PathBuf::from)
        .to_vec();
    manifest.finish(started, t0.elapsed(), workers, args.run.stable_output);
    manifest.write(&manifest_path)?;
    println!("{}", csv.display());
    Ok(())
}

pub fn truth(args: TruthArgs) -> Result<()> {
    let (model, laws, n, seed): (Arc<dyn PerformanceModel>, _, _, _) =
        match (&args.config, &args.model) {
            (Some(path), _) => {
                let config = ExperimentConfig::load(path)?;
                let exp = config.resolve(&config_base(path))?;
                let n = args
                    .n
                    .or(config.truth.oracle_n)
                    .unwrap_or(DEFAULT_TRUTH_RUNS);
                let seed = args
                    .seed
                    .or(config.truth.oracle_seed)
                    .unwrap_or(config.seed);
                (exp.model, exp.laws, n, seed)
            }
            (None, Some(name)) => {
                let p = preset(name)?;
                (
                    Arc::from(p.build_model()),
                    p.truth_laws,
                    args.n.unwrap_or(DEFAULT_TRUTH_RUNS),
                    args.seed.unwrap_or(0),
                )
            }
            (None, None) => unreachable!("clap requires --config or --model"),
        };
    let (value, se) = with_pool(&args.run, || estimate_truth(model.as_ref(), &laws, n, seed))?.0?;
    println!("{value},{se}");
    if args.pin {
        let path = args
            .config
            .as_ref()
            .expect("clap enforces --config with --pin");
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let pinned = pin_truth(&text, value, se, n, seed);
        ExperimentConfig::from_toml(&pinned).context("pinned config no longer parses")?;
        std::fs::write(path, pinned).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

/// Replaces (or appends) the `[truth]` table of a config, keeping the rest of
/// the text untouched.
fn pin_truth(text: &str, value: f64, se: f64, n: usize, seed: u64) -> String {
    let block =
        format!("[truth]\nvalue = {value:?}\nse = {se:?}\noracle_n = {n}\noracle_seed = {seed}\n");
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().position(|l| l.trim() == "[truth]");
    let mut out = String::new();
    match start {
        Some(s) => {
            let end = lines[s + 1..]
                .iter()
                .position(|l| l.trim_start().starts_with('['))
                .map_or(lines.len(), |e| s + 1 + e);
            for l in &lines[..s] {
                out.push_str(l);
                out.push('\n');
            }
            out.push_str(&block);
            if end < lines.len() {
                out.push('\n');
            }
            for l in &lines[end..] {
                out.push_str(l);
                out.push('\n');
            }
        }
        None => {
            for l in lines
                .iter()
                .filter(|l| !l.trim_start().starts_with("truth"))
            {
                out.push_str(l);
                out.push('\n');
            }
            out.push('\n');
            out.push_str(&block);
        }
    }
    out
}

pub fn draw_data(args: DrawDataArgs) -> Result<()> {
    let p = preset(&args.model)?;
    let data = p
        .truth_laws
        .draw_dataset(&args.sizes, &StreamKey::new(args.seed))?;
    for path in io::write_dataset_dir(&args.out, &data)? {
        println!("{}", path.display());
    }
    Ok(())
}
