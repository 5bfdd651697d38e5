//! Command-line surface: argument parsing, pipeline wiring and report writing.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde_json::{json, Value};

use crate::bias::{
    detect_bias_from_deltas, write_bias_csv, write_triplet_csv, BiasConfig, BiasDetection,
    DeltaFilter,
};
use crate::confusion::{detect_errors, pairwise_napvd, write_detection_csv};
use crate::coverage::{
    class_coverage_report, coincidence_table, per_image_coverage, profile_bounds,
    write_coverage_csv, DeepGaugeConfig,
};
use crate::error::{Error, Result};
use crate::evaluator::{
    aucec_gain, baseline_weight_vectors, cost_effectiveness, mean_random_aucec, optimal_curve,
    precision_recall, random_ranking, CostEffectivenessCurve,
};
use crate::ground_truth::{
    avg_cd_table, mark_ground_truth, write_truth_csv, ConfusionCounts, ErrKind, GroundTruthKind,
    GroundTruthSet,
};
use crate::pairs::{ClassPair, Detection, DetectionPolicy, Direction, PairScoreTable};
use crate::profiler::{activation_probability_matrix, normalize_min_max, ActivationThreshold};
use crate::stats::{effect_size_summary, kruskal_wallis, spearman};
use crate::trace::{group_images_by_class, load_bundle, Grouping, TaskKind, TraceBundle};

pub const SUMMARY_FILE: &str = "summary.json";
pub const SUMMARY_SCHEMA: &str = include_str!("../schema/summary.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Confusion,
    Bias,
    #[value(name = "groundtruth")]
    GroundTruth,
    Evaluate,
    Coverage,
    Sweep,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Confusion => "confusion",
            Mode::Bias => "bias",
            Mode::GroundTruth => "groundtruth",
            Mode::Evaluate => "evaluate",
            Mode::Coverage => "coverage",
            Mode::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupingArg {
    #[value(name = "by_predicted")]
    ByPredicted,
    #[value(name = "by_true")]
    ByTrue,
}

impl From<GroupingArg> for Grouping {
    fn from(g: GroupingArg) -> Self {
        match g {
            GroupingArg::ByPredicted => Grouping::ByPredicted,
            GroupingArg::ByTrue => Grouping::ByTrue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// mean - 1 std for confusion, mean + 1 std for bias.
    Std,
    /// The top `--fraction` of ranked pairs.
    Top,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "classprobe", version, about = "Detect class-level confusion and bias errors from neuron activation traces")]
pub struct Args {
    /// Trace bundle directory.
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "by_predicted")]
    pub grouping: GroupingArg,
    /// Activation threshold; a neuron is active when its output is strictly greater.
    #[arg(long, default_value_t = ActivationThreshold::DEFAULT, allow_negative_numbers = true)]
    pub th: f64,
    #[arg(long, value_enum, default_value = "std")]
    pub policy: PolicyArg,
    /// Fraction of pairs flagged by the top policy and by the evaluation top cutoff.
    #[arg(long, default_value_t = 0.01)]
    pub fraction: f64,
    /// Seed of the random baseline.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker thread cap. Output bytes do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Rescale every neuron to [0, 1] over the bundle before thresholding.
    #[arg(long)]
    pub normalize: bool,
    /// Comma-separated thresholds for the sweep mode.
    #[arg(long = "sweep-th", allow_hyphen_values = true)]
    pub sweep_th: Option<String>,
    /// Bundle used to profile coverage bounds (defaults to --bundle).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Number of seeds averaged for the mean random-baseline AUCEC.
    #[arg(long, default_value_t = 100)]
    pub random_seeds: u64,
    #[arg(long, default_value_t = 100)]
    pub k_sections: usize,
    #[arg(long, default_value_t = 1)]
    pub k_top: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub bundle_path: PathBuf,
    pub mode: Mode,
    pub grouping: Grouping,
    pub th: ActivationThreshold,
    pub policy: PolicyArg,
    pub fraction: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    pub normalize: bool,
    pub sweep: Vec<f64>,
    pub reference: Option<PathBuf>,
    pub random_seeds: u64,
    pub deepgauge: DeepGaugeConfig,
}

fn parse_thresholds(text: &str) -> Result<Vec<f64>> {
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::InvalidArgument("--sweep-th needs at least one threshold".into()));
    }
    items
        .into_iter()
        .map(|s| {
            let v: f64 = s
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad threshold {s:?}")))?;
            ActivationThreshold::new(v).map(ActivationThreshold::value)
        })
        .collect()
}

impl RunConfig {
    pub fn from_args(args: Args) -> Result<Self> {
        let th = ActivationThreshold::new(args.th)?;
        if !(args.fraction > 0.0 && args.fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "--fraction must lie in (0, 1], got {}",
                args.fraction
            )));
        }
        if args.threads == Some(0) {
            return Err(Error::InvalidArgument("--threads must be positive".into()));
        }
        if args.random_seeds == 0 {
            return Err(Error::InvalidArgument("--random-seeds must be positive".into()));
        }
        if args.k_sections == 0 || args.k_top == 0 {
            return Err(Error::InvalidArgument("--k-sections and --k-top must be positive".into()));
        }
        let sweep = match &args.sweep_th {
            Some(text) => parse_thresholds(text)?,
            None => ActivationThreshold::SWEEP.to_vec(),
        };
        Ok(RunConfig {
            bundle_path: args.bundle,
            mode: args.mode,
            grouping: args.grouping.into(),
            th,
            policy: args.policy,
            fraction: args.fraction,
            seed: args.seed,
            output_dir: args.out,
            threads: args.threads,
            normalize: args.normalize,
            sweep,
            reference: args.reference,
            random_seeds: args.random_seeds,
            deepgauge: DeepGaugeConfig {
                k_sections: args.k_sections,
                k_top: args.k_top,
            },
        })
    }

    fn confusion_policy(&self) -> Result<DetectionPolicy> {
        match self.policy {
            PolicyArg::Std => Ok(DetectionPolicy::mean_minus_std()),
            PolicyArg::Top => DetectionPolicy::top_fraction(self.fraction, Direction::LowIsError),
        }
    }

    fn bias_config(&self) -> Result<BiasConfig> {
        let policy = match self.policy {
            PolicyArg::Std => DetectionPolicy::mean_plus_std(),
            PolicyArg::Top => DetectionPolicy::top_fraction(self.fraction, Direction::HighIsError)?,
        };
        BiasConfig::new(DeltaFilter::MeanPlusStd, policy)
    }
}

/// Runs `cfg`, on a pool capped at `cfg.threads` workers when given.
pub fn run(cfg: &RunConfig) -> Result<()> {
    match cfg.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            pool.install(|| run_inner(cfg))
        }
        None => run_inner(cfg),
    }
}

pub fn main_with(args: Args) -> Result<()> {
    run(&RunConfig::from_args(args)?)
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    bundle: TraceBundle,
    names: Vec<String>,
}

impl Ctx<'_> {
    fn names(&self) -> Vec<&str> {
        self.names.iter().map(String::as_str).collect()
    }

    fn pair_json(&self, p: ClassPair) -> Value {
        json!([self.names[p.a], self.names[p.b]])
    }

    fn pairs_json(&self, pairs: impl IntoIterator<Item = ClassPair>) -> Value {
        Value::Array(pairs.into_iter().map(|p| self.pair_json(p)).collect())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

fn run_inner(cfg: &RunConfig) -> Result<()> {
    let raw = load_bundle(&cfg.bundle_path)?;
    let bundle = if cfg.normalize {
        raw.with_activations(normalize_min_max(raw.activations()))?
    } else {
        raw
    };
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let names = bundle.class_names().into_iter().map(String::from).collect();
    let ctx = Ctx { cfg, bundle, names };

    let body = match cfg.mode {
        Mode::Confusion => cmd_confusion(&ctx)?,
        Mode::Bias => cmd_bias(&ctx)?,
        Mode::GroundTruth => cmd_groundtruth(&ctx)?,
        Mode::Evaluate => cmd_evaluate(&ctx)?,
        Mode::Coverage => cmd_coverage(&ctx)?,
        Mode::Sweep => cmd_sweep(&ctx)?,
    };

    let b = &ctx.bundle;
    let summary = json!({
        "schema_version": 1,
        "mode": cfg.mode.name(),
        "input": {
            "task_kind": b.task_kind().to_string(),
            "n_images": b.n_images(),
            "n_neurons": b.n_neurons(),
            "n_classes": b.n_classes(),
            "has_weights": b.weight_vectors().is_some(),
        },
        "config": {
            "grouping": cfg.grouping.to_string(),
            "threshold": cfg.th.value(),
            "normalize": cfg.normalize,
            "policy": match cfg.policy { PolicyArg::Std => "std", PolicyArg::Top => "top" },
            "fraction": cfg.fraction,
            "seed": cfg.seed,
        },
        "result": body,
    });
    ctx.write_with(SUMMARY_FILE, |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(w).map_err(|e| Error::io(ctx.path(SUMMARY_FILE), e))
    })
}

fn napvd_table(ctx: &Ctx, th: ActivationThreshold) -> Result<(PairScoreTable, Vec<usize>)> {
    let groups = group_images_by_class(&ctx.bundle, ctx.cfg.grouping)?;
    let rho = activation_probability_matrix(&ctx.bundle, &groups, th)?;
    Ok((pairwise_napvd(&rho)?, groups.empty_classes()))
}

fn detection_json(ctx: &Ctx, d: &Detection) -> Value {
    json!({
        "pairs_defined": d.pair_count(),
        "cutoff": d.cutoff,
        "mean": d.mean,
        "std": d.std,
        "flagged_count": d.flagged_count(),
        "flagged": ctx.pairs_json(d.flagged()),
    })
}

fn cmd_confusion(ctx: &Ctx) -> Result<Value> {
    let groups = group_images_by_class(&ctx.bundle, ctx.cfg.grouping)?;
    let rho = activation_probability_matrix(&ctx.bundle, &groups, ctx.cfg.th)?;
    let table = pairwise_napvd(&rho)?;
    let d = detect_errors(&table, ctx.cfg.confusion_policy()?)?;
    let names = ctx.names();
    ctx.write_with("rho.csv", |w| rho.write_csv(&names, w))?;
    ctx.write_with("confusion.csv", |w| write_detection_csv(&d, &names, "napvd", w))?;
    let empty: Vec<&str> = groups.empty_classes().iter().map(|&c| names[c]).collect();
    Ok(json!({
        "empty_classes": empty,
        "confusion": detection_json(ctx, &d),
    }))
}

fn bias_json(ctx: &Ctx, r: &BiasDetection) -> Value {
    let mut v = detection_json(ctx, &r.detection);
    v["delta_filter_threshold"] = json!(r.table.filter_threshold);
    v["degenerate_triplets"] = json!(r.table.degenerate_total());
    v["masked_pairs"] = json!(r.table.details.iter().filter(|(_, d)| d.is_none()).count());
    v
}

fn cmd_bias(ctx: &Ctx) -> Result<Value> {
    let (deltas, empty) = napvd_table(ctx, ctx.cfg.th)?;
    let r = detect_bias_from_deltas(&deltas, ctx.cfg.bias_config()?)?;
    let names = ctx.names();
    ctx.write_with("bias.csv", |w| write_bias_csv(&r, &names, w))?;
    let top_k = r.detection.flagged_count();
    ctx.write_with("bias_triplets.csv", |w| {
        write_triplet_csv(&r, &deltas, &names, top_k, w)
    })?;
    let empty: Vec<&str> = empty.iter().map(|&c| names[c]).collect();
    Ok(json!({
        "empty_classes": empty,
        "bias": bias_json(ctx, &r),
    }))
}

struct Truths {
    kind: ErrKind,
    confusion: GroundTruthSet,
    bias: GroundTruthSet,
}

fn ground_truths(bundle: &TraceBundle) -> Result<Truths> {
    let kind = ErrKind::for_task(bundle.task_kind());
    let conf = ConfusionCounts::from_bundle(bundle, kind)?.conf_table();
    let cd = avg_cd_table(&conf);
    Ok(Truths {
        kind,
        confusion: mark_ground_truth(&conf, GroundTruthKind::confusion(kind))?,
        bias: mark_ground_truth(&cd, GroundTruthKind::bias(kind))?,
    })
}

fn truth_json(ctx: &Ctx, gt: &GroundTruthSet) -> Value {
    json!({
        "kind": gt.kind,
        "pairs_defined": gt.scores.defined_count(),
        "cutoff": gt.cutoff,
        "truth_count": gt.truth.len(),
        "truth": ctx.pairs_json(gt.truth.iter().copied()),
    })
}

fn cmd_groundtruth(ctx: &Ctx) -> Result<Value> {
    let t = ground_truths(&ctx.bundle)?;
    let names = ctx.names();
    ctx.write_with("gt_confusion.csv", |w| write_truth_csv(&t.confusion, &names, w))?;
    ctx.write_with("gt_bias.csv", |w| write_truth_csv(&t.bias, &names, w))?;
    Ok(json!({
        "error_kind": t.kind,
        "confusion": truth_json(ctx, &t.confusion),
        "bias": truth_json(ctx, &t.bias),
    }))
}

/// A ranking and truth set cut down to pairs both sides define.
struct Universe {
    ranking: Vec<ClassPair>,
    members: BTreeSet<ClassPair>,
    truth: BTreeSet<ClassPair>,
}

impl Universe {
    fn keep(&self, pairs: Vec<ClassPair>) -> Vec<ClassPair> {
        pairs.into_iter().filter(|p| self.members.contains(p)).collect()
    }
}

fn restrict(detection: &Detection, gt: &GroundTruthSet) -> Result<Universe> {
    let ranking: Vec<ClassPair> = detection
        .ranked_pairs()
        .into_iter()
        .filter(|p| gt.scores.get_pair(*p).is_some())
        .collect();
    let members: BTreeSet<ClassPair> = ranking.iter().copied().collect();
    let truth: BTreeSet<ClassPair> = gt.truth.intersection(&members).copied().collect();
    if truth.is_empty() {
        return Err(Error::NoTruth);
    }
    Ok(Universe {
        ranking,
        members,
        truth,
    })
}

#[derive(Clone, Copy)]
enum Task {
    Confusion,
    Bias,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Confusion => "confusion",
            Task::Bias => "bias",
        }
    }
}

/// Detections of one representation (activation profiles or weights) at both cutoffs.
struct Detections {
    std: Detection,
    top: Detection,
}

fn detect_task(task: Task, deltas: &PairScoreTable, fraction: f64) -> Result<Detections> {
    Ok(match task {
        Task::Confusion => Detections {
            std: detect_errors(deltas, DetectionPolicy::mean_minus_std())?,
            top: detect_errors(deltas, DetectionPolicy::top_fraction(fraction, Direction::LowIsError)?)?,
        },
        Task::Bias => {
            let std = BiasConfig::new(DeltaFilter::MeanPlusStd, DetectionPolicy::mean_plus_std())?;
            let top = BiasConfig::new(
                DeltaFilter::MeanPlusStd,
                DetectionPolicy::top_fraction(fraction, Direction::HighIsError)?,
            )?;
            Detections {
                std: detect_bias_from_deltas(deltas, std)?.detection,
                top: detect_bias_from_deltas(deltas, top)?.detection,
            }
        }
    })
}

#[derive(serde::Serialize)]
struct EvalRow {
    task: &'static str,
    model: &'static str,
    cutoff: &'static str,
    flagged: usize,
    tp: usize,
    fp: usize,
    precision: Option<f64>,
    recall: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.9}"))
}

fn flagged_in(d: &Detection, u: &Universe) -> Vec<ClassPair> {
    u.keep(d.flagged())
}

fn cmd_evaluate(ctx: &Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let truths = ground_truths(&ctx.bundle)?;
    let (napvd, _) = napvd_table(ctx, cfg.th)?;
    let weights = match baseline_weight_vectors(&ctx.bundle) {
        Ok(t) => Some(t),
        Err(Error::NoWeights) => None,
        Err(e) => return Err(e),
    };

    let mut rows = Vec::new();
    let mut tasks = serde_json::Map::new();
    for task in [Task::Confusion, Task::Bias] {
        let gt = match task {
            Task::Confusion => &truths.confusion,
            Task::Bias => &truths.bias,
        };
        let method = detect_task(task, &napvd, cfg.fraction)?;
        let u = restrict(&method.std, gt)?;
        let wdet = weights
            .as_ref()
            .map(|w| detect_task(task, w, cfg.fraction))
            .transpose()?;
        let rand_order = random_ranking(&u.ranking, cfg.seed);

        for (cutoff, md, wd) in [
            ("mean_std", &method.std, wdet.as_ref().map(|w| &w.std)),
            ("top_1pct", &method.top, wdet.as_ref().map(|w| &w.top)),
        ] {
            let flagged = flagged_in(md, &u);
            let pr = precision_recall(&flagged, &u.truth)?;
            rows.push(EvalRow {
                task: task.name(),
                model: "method",
                cutoff,
                flagged: flagged.len(),
                tp: pr.tp,
                fp: pr.fp,
                precision: pr.precision,
                recall: pr.recall,
            });
            if let Some(wd) = wd {
                let wf = u.keep(wd.flagged());
                let pr = precision_recall(&wf, &u.truth)?;
                rows.push(EvalRow {
                    task: task.name(),
                    model: "weights",
                    cutoff,
                    flagged: wf.len(),
                    tp: pr.tp,
                    fp: pr.fp,
                    precision: pr.precision,
                    recall: pr.recall,
                });
            }
            // The random baseline inspects as many pairs as the method flags.
            let rf = &rand_order[..flagged.len()];
            let pr = precision_recall(rf, &u.truth)?;
            rows.push(EvalRow {
                task: task.name(),
                model: "random",
                cutoff,
                flagged: rf.len(),
                tp: pr.tp,
                fp: pr.fp,
                precision: pr.precision,
                recall: pr.recall,
            });
        }

        let method_curve = cost_effectiveness(&u.ranking, &u.truth)?;
        let random_curve = cost_effectiveness(&rand_order, &u.truth)?;
        let optimal = optimal_curve(&u.ranking, &u.truth)?;
        let weights_curve = match &wdet {
            Some(w) => {
                let order = u.keep(w.std.ranked_pairs());
                Some(cost_effectiveness(&order, &u.truth)?)
            }
            None => None,
        };
        let random_mean = mean_random_aucec(&u.ranking, &u.truth, cfg.seed, cfg.random_seeds)?;

        let mut curves: Vec<(&str, &CostEffectivenessCurve)> = vec![
            ("method", &method_curve),
            ("random", &random_curve),
            ("optimal", &optimal),
        ];
        if let Some(c) = &weights_curve {
            curves.push(("weights", c));
        }
        for (model, curve) in &curves {
            ctx.write_with(&format!("curve_{}_{}.csv", task.name(), model), |w| curve.write_csv(w))?;
        }

        let weights_aucec = weights_curve.as_ref().map(|c| c.aucec);
        tasks.insert(
            task.name().to_string(),
            json!({
                "ground_truth": truth_json(ctx, gt),
                "pairs_evaluated": u.ranking.len(),
                "truth_evaluated": u.truth.len(),
                "aucec": {
                    "method": method_curve.aucec,
                    "random": random_curve.aucec,
                    "random_mean": random_mean,
                    "optimal": optimal.aucec,
                    "weights": weights_aucec,
                },
                "random_seeds": { "first": cfg.seed, "count": cfg.random_seeds },
                "gain": {
                    "vs_random_mean": aucec_gain(method_curve.aucec, random_mean),
                    "vs_weights": weights_aucec.and_then(|w| aucec_gain(method_curve.aucec, w)),
                },
            }),
        );
    }

    ctx.write_with("evaluation.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
        out.write_record(["task", "model", "cutoff", "flagged", "tp", "fp", "precision", "recall"])
            .map_err(err)?;
        for r in &rows {
            out.write_record([
                r.task.to_string(),
                r.model.to_string(),
                r.cutoff.to_string(),
                r.flagged.to_string(),
                r.tp.to_string(),
                r.fp.to_string(),
                fmt_opt(r.precision),
                format!("{:.9}", r.recall),
            ])
            .map_err(err)?;
        }
        out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    })?;

    Ok(json!({
        "error_kind": truths.kind,
        "rows": serde_json::to_value(&rows).map_err(|e| Error::InvalidArgument(e.to_string()))?,
        "tasks": Value::Object(tasks),
    }))
}

fn cmd_coverage(ctx: &Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let test_raw = load_bundle(&cfg.bundle_path)?;
    let reference = match &cfg.reference {
        Some(p) => load_bundle(p)?,
        None => test_raw.clone(),
    };
    if reference.n_neurons() != test_raw.n_neurons() || reference.class_names() != test_raw.class_names() {
        return Err(Error::InvalidArgument(
            "reference bundle must share neurons and classes with the test bundle".into(),
        ));
    }
    let ref_groups = group_images_by_class(&reference, cfg.grouping)?;
    let bounds = profile_bounds(&reference, &ref_groups);
    let test_groups = group_images_by_class(&ctx.bundle, cfg.grouping)?;

    // Thresholded coverage uses the (optionally normalized) bundle; DeepGauge uses raw outputs.
    let mut rows = class_coverage_report(&test_raw, &test_groups, &bounds, cfg.th, cfg.deepgauge);
    let nc = crate::coverage::neuron_coverage_per_class(&ctx.bundle, &test_groups, cfg.th);
    for (r, v) in rows.iter_mut().zip(nc) {
        r.nc = v;
    }
    let names = ctx.names();
    ctx.write_with("coverage.csv", |w| write_coverage_csv(&rows, &names, w))?;

    let per_image = per_image_coverage(&ctx.bundle, &test_groups, cfg.th);
    let kw = match kruskal_wallis(&per_image) {
        Ok(k) => Some(k),
        Err(Error::NoContrast) => None,
        Err(e) => return Err(e),
    };
    let effects = effect_size_summary(&per_image.iter().filter(|g| !g.is_empty()).cloned().collect::<Vec<_>>());

    let coincidence = if ctx.bundle.task_kind() == TaskKind::MultiLabel && ctx.bundle.has_true_labels() {
        let coin = coincidence_table(&ctx.bundle)?;
        ctx.write_with("coincidence.csv", |w| {
            let mut out = csv::Writer::from_writer(w);
            let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
            out.write_record(["class_a", "class_b", "coincidence"]).map_err(err)?;
            for (p, s) in coin.iter_defined() {
                out.write_record([names[p.a].to_string(), names[p.b].to_string(), format!("{s:.9}")])
                    .map_err(err)?;
            }
            out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
        })?;
        let (napvd, _) = napvd_table(ctx, cfg.th)?;
        let (xs, ys): (Vec<f64>, Vec<f64>) = coin
            .iter_defined()
            .filter_map(|(p, c)| napvd.get_pair(p).map(|d| (c, d)))
            .unzip();
        Some(json!({
            "pairs_defined": coin.defined_count(),
            "spearman_vs_napvd": spearman(&xs, &ys).ok(),
        }))
    } else {
        None
    };

    Ok(json!({
        "deepgauge": {
            "k_sections": cfg.deepgauge.k_sections,
            "k_top": cfg.deepgauge.k_top,
            "reference_images": reference.n_images(),
        },
        "classes_with_coverage": rows.iter().filter(|r| r.nc.is_some()).count(),
        "kruskal_wallis": kw,
        "effect_sizes": {
            "counts": effects,
            "percentages": effects.percentages(),
        },
        "coincidence": coincidence,
    }))
}

fn jaccard_distance(a: &BTreeSet<ClassPair>, b: &BTreeSet<ClassPair>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection(b).count() as f64 / union as f64
}

/// Largest pairwise Jaccard distance between flagged sets.
pub fn max_jaccard_distance(sets: &[BTreeSet<ClassPair>]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            worst = worst.max(jaccard_distance(&sets[i], &sets[j]));
        }
    }
    worst
}

fn cmd_sweep(ctx: &Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let truths = ground_truths(&ctx.bundle)?;
    let mut rows = Vec::new();
    let mut per_task: Vec<(Task, Vec<BTreeSet<ClassPair>>)> =
        vec![(Task::Confusion, Vec::new()), (Task::Bias, Vec::new())];
    let mut points = Vec::new();
    for &th in &cfg.sweep {
        let (napvd, _) = napvd_table(ctx, ActivationThreshold::new(th)?)?;
        let mut entry = serde_json::Map::new();
        entry.insert("th".into(), json!(th));
        for (task, sets) in per_task.iter_mut() {
            let gt = match task {
                Task::Confusion => &truths.confusion,
                Task::Bias => &truths.bias,
            };
            let d = detect_task(*task, &napvd, cfg.fraction)?.std;
            let u = restrict(&d, gt)?;
            let flagged = flagged_in(&d, &u);
            let pr = precision_recall(&flagged, &u.truth)?;
            let curve = cost_effectiveness(&u.ranking, &u.truth)?;
            rows.push((th, task.name(), flagged.len(), pr, curve.aucec));
            entry.insert(
                task.name().into(),
                json!({ "flagged": ctx.pairs_json(flagged.iter().copied()), "aucec": curve.aucec }),
            );
            sets.push(flagged.into_iter().collect());
        }
        points.push(Value::Object(entry));
    }

    ctx.write_with("sweep.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
        out.write_record(["th", "task", "flagged", "tp", "fp", "precision", "recall", "aucec"])
            .map_err(err)?;
        for (th, task, flagged, pr, aucec) in &rows {
            out.write_record([
                th.to_string(),
                task.to_string(),
                flagged.to_string(),
                pr.tp.to_string(),
                pr.fp.to_string(),
                fmt_opt(pr.precision),
                format!("{:.9}", pr.recall),
                format!("{aucec:.9}"),
            ])
            .map_err(err)?;
        }
        out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    })?;

    let mut stability = serde_json::Map::new();
    for (task, sets) in &per_task {
        stability.insert(task.name().into(), json!(max_jaccard_distance(sets)));
    }
    Ok(json!({
        "thresholds": cfg.sweep,
        "points": points,
        "max_jaccard_distance": Value::Object(stability),
    }))
}

/// Reads a summary file written by [`run`].
pub fn read_summary(dir: &Path) -> Result<Value> {
    let path = dir.join(SUMMARY_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::CorruptBundle(e.to_string()))
}
