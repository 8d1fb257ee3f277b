//! Batch front end over the segmentation library: each command reads a model
//! JSON, does one job, and writes CSV/JSON artifacts. Every command is
//! deterministic given its flags; rerunning produces byte-identical files.
//!
//! Exit codes: 0 success, 1 usage (bad flags or parameter ranges), 2 unusable
//! model file (unreadable, unparseable, or invalid), 3 runtime failure
//! (zero-likelihood data, malformed inputs, enumeration guard, I/O).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use segrisk::model::{EmissionFamily, HmmModel, LabeledSample, LossMatrix, ModelSpec, ObsSeq};
use segrisk::regeneration::ClusterOutcome;
use segrisk::{
    brute_best, check_a2, detect_cluster, enumerate_paths, evaluate_risks, forgetting_profile,
    forward_backward, hybrid_log_r1, hybrid_r1, pmap, simulate, viterbi, BarrierSet, Error,
    OracleObjective, PathKind, RiskReport, SimConfig, StatePath,
};

#[derive(Parser)]
#[command(name = "segrisk", version, about = "Segment hidden Markov chains and measure the risks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw one observation sequence (optionally with the hidden truth) to CSV.
    Sample {
        #[arg(long)]
        model: PathBuf,
        /// Sequence length (>= 1).
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the hidden states as a second column `y`.
        #[arg(long)]
        with_truth: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode an observation CSV and report each method's risks.
    Align {
        #[arg(long)]
        model: PathBuf,
        /// Observation CSV (header `x` or `x,y`; the `y` column is ignored).
        #[arg(long)]
        x: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::All)]
        method: MethodArg,
        /// Penalty weight; required by the hybrid methods.
        #[arg(long)]
        c: Option<f64>,
        /// Penalties at which the combined risk is tabulated in the report.
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2")]
        c_grid: Vec<f64>,
        /// Report JSON; each method's path goes to `<stem>.<method>.path.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the risks of an externally supplied state path.
    Risk {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        x: PathBuf,
        /// State path CSV (header `state`), one state per line.
        #[arg(long)]
        path: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2")]
        c_grid: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the cluster and dominance assumptions behind the asymptotics.
    Check {
        #[arg(long)]
        model: PathBuf,
        /// Density floor for the continuous barrier set (default: half-mass
        /// interval).
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo study of the asymptotic risks: trace CSV + report JSON.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        /// Full sequence length (the last checkpoint).
        #[arg(long)]
        n: usize,
        #[arg(long)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Prefix lengths at which risks are recorded; default is a geometric
        /// grid ending at n.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
        /// Suffix pad for the prefix-fixation probes.
        #[arg(long)]
        m_pad: Option<usize>,
        /// Spacing of the fixation probe grid.
        #[arg(long)]
        probe_step: Option<usize>,
        /// Stationarity burn-in override (default max(100, 2 * mean cycle)).
        #[arg(long)]
        burn_in: Option<usize>,
        /// Trace CSV path.
        #[arg(long)]
        trace: PathBuf,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Total-variation flatness of smoothing marginals as the window grows.
    Forgetting {
        #[arg(long)]
        model: PathBuf,
        /// Observation CSV; mutually exclusive with --n.
        #[arg(long, conflicts_with = "n")]
        x: Option<PathBuf>,
        /// Sample a fresh sequence of this length instead of reading one.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// First anchor position (0-based).
        #[arg(long)]
        anchor_start: usize,
        #[arg(long)]
        anchor_count: usize,
        #[arg(long, default_value_t = 1)]
        anchor_step: usize,
        /// Windows to measure at each anchor; default 1..=40.
        #[arg(long, value_delimiter = ',')]
        gaps: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exhaustive-enumeration reference decoder (guarded; for debugging).
    Oracle {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        x: PathBuf,
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
        /// Penalty weight; required by the hybrid objectives.
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    Viterbi,
    Pmap,
    Hybrid,
    HybridR1,
    All,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ObjectiveArg {
    Viterbi,
    Pmap,
    HybridLogR1,
    HybridR1,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure { code: 1, msg: msg.into() }
    }
    fn model(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }
    fn runtime(msg: impl Into<String>) -> Self {
        Failure { code: 3, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidModel(_) => 2,
            Error::BadConfig { .. } | Error::BadPenalty { .. } | Error::BadLoss { .. } => 1,
            _ => 3,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Sample { model, n, seed, with_truth, out } => {
            let model = load_model(&model)?;
            let sample = model.sample(n, seed)?;
            write_file(&out, &sample_csv(&sample, with_truth))
        }
        Cmd::Align { model, x, method, c, c_grid, out } => {
            let model = load_model(&model)?;
            let x = read_observations(&x, &model)?;
            cmd_align(&model, &x, method, c, &c_grid, &out)
        }
        Cmd::Risk { model, x, path, c_grid, out } => {
            let model = load_model(&model)?;
            let x = read_observations(&x, &model)?;
            let states = read_state_path(&path)?;
            let path = StatePath::new(&model, &x, states, PathKind::External)?;
            let post = forward_backward(&model, &x)?;
            let loss = LossMatrix::symmetric(model.num_states());
            let report = evaluate_risks(&model, &post, &path, &loss, &c_grid)?;
            write_file(&out, &pretty(&risk_json(&report)))
        }
        Cmd::Check { model, eps, out } => {
            let model = load_model(&model)?;
            let a1 = detect_cluster(&model, eps)?;
            let a2 = check_a2(&model);
            let report = json!({ "a1": a1_json(&a1), "a2": a2_json(&a2) });
            write_file(&out, &pretty(&report))
        }
        Cmd::Estimate {
            model,
            n,
            reps,
            seed,
            checkpoints,
            m_pad,
            probe_step,
            burn_in,
            trace,
            out,
        } => {
            let model_id = stem_of(&model);
            let model = load_model(&model)?;
            let loss = LossMatrix::symmetric(model.num_states());
            let mut cfg = SimConfig::new(model_id, n, reps, seed, loss)?;
            if let Some(cp) = checkpoints {
                cfg.checkpoints = cp;
            }
            if let Some(p) = m_pad {
                cfg.m_pad = p;
            }
            if let Some(p) = probe_step {
                cfg.probe_step = p;
            }
            cfg.burn_in = burn_in;
            let (trace_data, report) = simulate(&model, &cfg)?;
            write_file(&trace, &trace_csv(&trace_data))?;
            write_file(&out, &pretty(&to_value(&report)))
        }
        Cmd::Forgetting {
            model,
            x,
            n,
            seed,
            anchor_start,
            anchor_count,
            anchor_step,
            gaps,
            out,
        } => {
            let model = load_model(&model)?;
            let x = match (x, n) {
                (Some(path), None) => read_observations(&path, &model)?,
                (None, Some(n)) => model.sample(n, seed)?.x,
                _ => return Err(Failure::usage("provide exactly one of --x and --n")),
            };
            if anchor_count == 0 || anchor_step == 0 {
                return Err(Failure::usage("anchor count and step must be >= 1"));
            }
            let gaps = gaps.unwrap_or_else(|| (1..=40).collect());
            cmd_forgetting(&model, &x, anchor_start, anchor_count, anchor_step, &gaps, &out)
        }
        Cmd::Oracle { model, x, objective, c, out } => {
            let model = load_model(&model)?;
            let x = read_observations(&x, &model)?;
            cmd_oracle(&model, &x, objective, c, &out)
        }
    }
}

fn cmd_align(
    model: &HmmModel,
    x: &ObsSeq,
    method: MethodArg,
    c: Option<f64>,
    c_grid: &[f64],
    out: &Path,
) -> Result<(), Failure> {
    let post = forward_backward(model, x)?;
    let loss = LossMatrix::symmetric(model.num_states());
    let mut methods: Vec<(&str, StatePath)> = Vec::new();
    let needs_c = || {
        c.ok_or_else(|| Failure::usage("--method hybrid and hybrid-r1 require --c"))
    };
    match method {
        MethodArg::Viterbi => methods.push(("viterbi", viterbi(model, x)?)),
        MethodArg::Pmap => methods.push(("pmap", pmap(model, x, &post)?)),
        MethodArg::Hybrid => {
            methods.push(("hybrid_log_r1", hybrid_log_r1(model, x, &post, needs_c()?)?))
        }
        MethodArg::HybridR1 => {
            methods.push(("hybrid_r1", hybrid_r1(model, x, &post, needs_c()?)?))
        }
        MethodArg::All => {
            methods.push(("viterbi", viterbi(model, x)?));
            methods.push(("pmap", pmap(model, x, &post)?));
            if let Some(c) = c {
                methods.push(("hybrid_log_r1", hybrid_log_r1(model, x, &post, c)?));
                methods.push(("hybrid_r1", hybrid_r1(model, x, &post, c)?));
            }
        }
    }
    let mut report = serde_json::Map::new();
    for (name, path) in &methods {
        write_file(&sibling(out, name), &path_csv(path))?;
        let risks = evaluate_risks(model, &post, path, &loss, c_grid)?;
        report.insert((*name).into(), risk_json(&risks));
    }
    write_file(out, &pretty(&Value::Object(report)))
}

fn cmd_forgetting(
    model: &HmmModel,
    x: &ObsSeq,
    start: usize,
    count: usize,
    step: usize,
    gaps: &[usize],
    out: &Path,
) -> Result<(), Failure> {
    let mut body = String::from("t,gap,tv\n");
    let mut summary = String::new();
    for i in 0..count {
        let t = start + i * step;
        let profile = forgetting_profile(model, x, t, gaps)?;
        for (g, tv) in profile.gaps.iter().zip(&profile.tv) {
            let _ = writeln!(body, "{t},{g},{tv}");
        }
        match profile.fitted_log_slope {
            Some(s) => {
                let _ = writeln!(summary, "{t},slope,{s}");
            }
            None => {
                let _ = writeln!(summary, "{t},slope,");
            }
        }
    }
    body.push_str(&summary);
    write_file(out, &body)
}

fn cmd_oracle(
    model: &HmmModel,
    x: &ObsSeq,
    objective: ObjectiveArg,
    c: Option<f64>,
    out: &Path,
) -> Result<(), Failure> {
    let needs_c =
        || c.ok_or_else(|| Failure::usage("hybrid objectives require --c"));
    let (obj, c_used) = match objective {
        ObjectiveArg::Viterbi => (OracleObjective::Viterbi, None),
        ObjectiveArg::Pmap => (OracleObjective::Pmap, None),
        ObjectiveArg::HybridLogR1 => {
            let c = needs_c()?;
            (OracleObjective::HybridLogR1(c), Some(c))
        }
        ObjectiveArg::HybridR1 => {
            let c = needs_c()?;
            (OracleObjective::HybridR1(c), Some(c))
        }
    };
    let loss = LossMatrix::symmetric(model.num_states());
    let (path, value) = brute_best(model, x, obj, &loss)?;
    let e = enumerate_paths(model, x)?;
    let mut report = json!({
        "path": path.states,
        "value": value,
        "log_evidence": e.log_evidence(),
        "num_paths": e.num_paths(),
    });
    if let Some(c) = c_used {
        report["c"] = json!(c);
    }
    write_file(out, &pretty(&report))
}

fn load_model(path: &Path) -> Result<HmmModel, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::model(format!("cannot read model file {}: {e}", path.display())))?;
    let spec: ModelSpec = serde_json::from_str(&text)
        .map_err(|e| Failure::model(format!("model file {}: {e}", path.display())))?;
    Ok(HmmModel::from_spec(spec)?)
}

/// Observation CSV: header `x` or `x,y`, one value per line; a `y` column is
/// accepted and ignored so sampled files feed straight back in.
fn read_observations(path: &Path, model: &HmmModel) -> Result<ObsSeq, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some("x") | Some("x,y") => {}
        _ => {
            return Err(Failure::runtime(format!(
                "{}: expected header `x` or `x,y`",
                path.display()
            )))
        }
    }
    let mut symbols = Vec::new();
    let mut reals = Vec::new();
    let discrete = matches!(model.emission(), EmissionFamily::Categorical { .. });
    for (idx, line) in lines.enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        let bad = |e: &dyn std::fmt::Display| {
            Failure::runtime(format!("{} line {}: {e}", path.display(), idx + 2))
        };
        if discrete {
            symbols.push(field.parse::<usize>().map_err(|e| bad(&e))?);
        } else {
            reals.push(field.parse::<f64>().map_err(|e| bad(&e))?);
        }
    }
    Ok(if discrete { ObsSeq::Symbols(symbols) } else { ObsSeq::Reals(reals) })
}

fn read_state_path(path: &Path) -> Result<Vec<usize>, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("state") {
        return Err(Failure::runtime(format!("{}: expected header `state`", path.display())));
    }
    let mut states = Vec::new();
    for (idx, line) in lines.enumerate() {
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        states.push(field.parse::<usize>().map_err(|e| {
            Failure::runtime(format!("{} line {}: {e}", path.display(), idx + 2))
        })?);
    }
    Ok(states)
}

fn sample_csv(sample: &LabeledSample, with_truth: bool) -> String {
    let mut out = String::from(if with_truth { "x,y\n" } else { "x\n" });
    let n = sample.x.len();
    for t in 0..n {
        match &sample.x {
            ObsSeq::Symbols(xs) => {
                let _ = write!(out, "{}", xs[t]);
            }
            ObsSeq::Reals(xs) => {
                let _ = write!(out, "{}", xs[t]);
            }
        }
        if with_truth {
            let _ = write!(out, ",{}", sample.y[t]);
        }
        out.push('\n');
    }
    out
}

fn path_csv(path: &StatePath) -> String {
    let mut out = String::from("state\n");
    for &s in &path.states {
        let _ = writeln!(out, "{s}");
    }
    out
}

fn trace_csv(trace: &segrisk::SimulationTrace) -> String {
    let mut out = String::from(
        "n,replicate,empirical_r1,conditional_r1,rbar1_viterbi,rbar1_pmap,rbar_inf_direct,rbar_inf_decomposed\n",
    );
    for r in &trace.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.n,
            r.replicate,
            r.empirical_r1,
            r.conditional_r1,
            r.rbar1_viterbi,
            r.rbar1_pmap,
            r.rbar_inf_direct,
            r.rbar_inf_decomposed
        );
    }
    out
}

fn risk_json(report: &RiskReport) -> Value {
    let mut rbar_c = serde_json::Map::new();
    for (c, value) in &report.rbar_c {
        rbar_c.insert(format!("{c}"), to_value(value));
    }
    json!({
        "r1": report.r1,
        "rbar1": to_value(&report.rbar1),
        "rbar_inf": to_value(&report.rbar_inf),
        "rbar_c": Value::Object(rbar_c),
    })
}

fn a1_json(outcome: &ClusterOutcome) -> Value {
    match outcome {
        ClusterOutcome::Found(info) => json!({
            "holds": true,
            "cluster": info.cluster,
            "r": info.r,
            "eps": info.eps,
            "M": info.m_bound,
            "barrier_set": barrier_json(&info.barrier_set),
        }),
        ClusterOutcome::Failed(why) => json!({
            "holds": false,
            "cluster": Value::Null,
            "r": Value::Null,
            "eps": Value::Null,
            "M": Value::Null,
            "barrier_set": Value::Null,
            "why": why.to_string(),
        }),
    }
}

fn a2_json(report: &segrisk::DominanceReport) -> Value {
    let mut out = json!({
        "holds": report.holds,
        "witnesses": to_value(&report.witnesses),
    });
    if let Some(note) = &report.two_state_advisory {
        out["two_state_advisory"] = json!(note);
    }
    out
}

fn barrier_json(set: &BarrierSet) -> Value {
    match set {
        BarrierSet::Symbols(symbols) => json!({ "symbols": symbols }),
        BarrierSet::Interval { lo, hi } => json!({ "interval": { "lo": lo, "hi": hi } }),
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize infallibly")
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON reports have no non-string keys");
    s.push('\n');
    s
}

fn stem_of(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string()
}

fn sibling(out: &Path, method: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.{method}.path.csv"))
}

fn write_file(path: &Path, content: &str) -> Result<(), Failure> {
    fs::write(path, content)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}
