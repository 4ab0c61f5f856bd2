use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use emshap::data::{Dataset, IngestOptions, Normalization};
use emshap::evaluation::{mad, sic_auc, toy_bound_experiment, SicCurve, SicDirection, ToyConfig};
use emshap::model::{fit_linear, fit_mlp, MlpFitConfig, Model, ModelForm, Rescaled, Squash, ZooModel};
use emshap::shapley::{
    alpha, emshap_attribute, exact_shapley, kernel_shap, sampling_shap, sigma_star_inverse_check, AttributionResult,
    BackgroundPolicy, EmShapOptions, FnGame, MarginalOracle,
};
use emshap::trainer::{train as train_model, EmShapModel, TrainConfig};
use emshap::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::output::{sig6, sig6_list, Writer};
use crate::{
    AttributeArgs, Common, EstimatorArg, EvaluateArgs, ExactArgs, FitModelArgs, ModelKind, SquashArg, TheoryArgs,
    ToyBoundArgs, TrainArgs,
};

/// Maps an error to `(kind, exit code)`.
pub fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io(_) => ("io", 3),
                Error::Config(_) => ("config", 4),
                Error::Usage(_) => ("usage", 4),
                Error::Data(_) => ("data", 5),
                Error::Dimension { .. } => ("dimension", 5),
                Error::NumericOverflow(_) => ("numeric", 6),
                Error::Divergence { .. } => ("divergence", 6),
                Error::Singular(_) => ("singular", 6),
                Error::Capacity { .. } => ("capacity", 6),
                Error::Contract(_) => ("contract", 1),
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ("io", 3);
        }
    }
    ("internal", 1)
}

/// What `train` leaves behind and `attribute --emshap` reads.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub feature_names: Vec<String>,
    pub normalization: Normalization,
    pub config: TrainConfig,
    pub model: EmShapModel,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())).into())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<(T, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let value = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Data(format!("{what} {}: {e}", path.display())))?;
    Ok((value, bytes))
}

/// Config file contents, or `T::default()` when no file was given.
fn load_config<T: serde::de::DeserializeOwned + Default>(common: &Common, w: &mut Vec<(String, Vec<u8>)>) -> Result<T> {
    match &common.config {
        None => Ok(T::default()),
        Some(p) => {
            let bytes = read_bytes(p)?;
            let cfg = serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            w.push((p.display().to_string(), bytes));
            Ok(cfg)
        }
    }
}

fn load_csv(path: &Path, target: Option<&str>) -> Result<(Dataset, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let opts = IngestOptions {
        target: target.map(str::to_string),
        ..IngestOptions::default()
    };
    let ds = emshap::data::ingest_reader(bytes.as_slice(), &opts).with_context(|| format!("reading {}", path.display()))?;
    if ds.dropped_rows > 0 {
        eprintln!("{}: dropped {} rows with missing values", path.display(), ds.dropped_rows);
    }
    Ok((ds, bytes))
}

fn load_model(path: &Path) -> Result<(ZooModel, Vec<u8>)> {
    let (m, bytes): (ZooModel, _) = read_json(path, "model")?;
    m.validate()?;
    Ok((m, bytes))
}

fn worker_count() -> Result<usize> {
    match std::env::var("EMSHAP_THREADS") {
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("EMSHAP_THREADS must be a positive integer, got {s:?}")).into()),
        },
    }
}

/// Runs `job` for every index on a bounded pool. Results come back in index
/// order, so output never depends on the worker count.
fn run_pool<T: Send>(n: usize, job: impl Fn(usize) -> emshap::Result<T> + Sync) -> Result<Vec<T>> {
    let workers = worker_count()?.min(n.max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<emshap::Result<T>>> = (0..n).map(|_| None).collect();
    let done = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = job(i);
                done.lock().expect("result lock").push((i, r));
            });
        }
    });
    for (i, r) in done.into_inner().expect("result lock") {
        slots[i] = Some(r);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.expect("every job ran").with_context(|| format!("row {i}")))
        .collect()
}

fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

fn limit_rows(rows: &mut Vec<Vec<f64>>, limit: Option<usize>) {
    if let Some(n) = limit {
        rows.truncate(n);
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg_inputs = Vec::new();
    let mut cfg: TrainConfig = load_config(&a.common, &mut cfg_inputs)?;
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.k_tilde {
        cfg.k_tilde = v;
    }
    if let Some(v) = a.zeta_min {
        cfg.zeta_min = v;
    }
    if let Some(v) = a.zeta_max {
        cfg.zeta_max = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    cfg.validate()?;

    let (mut ds, bytes) = load_csv(&a.input, a.target.as_deref())?;
    ds.normalize()?;
    let report = train_model(&ds.rows, &cfg)?;

    let mut w = Writer::new(&a.common.out, "train", Some(cfg.seed), serde_json::to_value(&cfg)?)?;
    for (p, b) in &cfg_inputs {
        w.record_input(Path::new(p), b);
    }
    w.record_input(&a.input, &bytes);
    let ckpt = Checkpoint {
        feature_names: ds.feature_names.clone(),
        normalization: ds.normalization.clone().expect("normalised above"),
        config: cfg,
        model: report.model.clone(),
    };
    w.json("model.json", &ckpt)?;
    w.text("loss.csv", &report.loss_csv())?;
    w.finish()?;
    let losses = report.losses();
    println!("epochs: {}", losses.len());
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        println!("loss: {} -> {}", sig6(*first), sig6(*last));
    }
    eprintln!("training took {:.2}s", report.wall_clock_secs);
    Ok(())
}

pub fn fit_model(a: FitModelArgs) -> Result<()> {
    let mut cfg_inputs = Vec::new();
    let mut cfg: MlpFitConfig = load_config(&a.common, &mut cfg_inputs)?;
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    cfg.classifier = a.kind == ModelKind::MlpClassifier;
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate < 1.0) {
        return Err(Error::Config(format!("learning rate {} outside (0, 1)", cfg.learning_rate)).into());
    }

    let (ds, bytes) = load_csv(&a.input, Some(&a.target))?;
    let targets = ds.target.clone().ok_or_else(|| Error::Data("no target column".into()))?;
    let mut model = match a.kind {
        ModelKind::Linear => {
            let (weights, bias) = fit_linear(&ds.rows, &targets)?;
            ZooModel::linear(weights, bias, Squash::None)
        }
        ModelKind::Mlp | ModelKind::MlpClassifier => fit_mlp(&ds.rows, &targets, &cfg)?,
    };
    if a.kind != ModelKind::MlpClassifier {
        model.squash = match a.squash {
            SquashArg::None => Squash::None,
            SquashArg::Sigmoid => Squash::Sigmoid,
            SquashArg::Clip => {
                let raw = ds.rows.iter().map(|r| model.raw(r)).collect::<emshap::Result<Vec<_>>>()?;
                let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !(hi > lo) {
                    return Err(Error::Data("model output is constant on the training data".into()).into());
                }
                Squash::Clip { lo, hi }
            }
        };
    }
    model.validate()?;
    let mse = ds
        .rows
        .iter()
        .zip(&targets)
        .map(|(r, t)| model.raw(r).map(|y| (y - t).powi(2)))
        .sum::<emshap::Result<f64>>()?
        / ds.len() as f64;

    let config = serde_json::json!({ "kind": a.kind, "squash": a.squash, "mlp": cfg, "target": a.target });
    let mut w = Writer::new(&a.common.out, "fit-model", Some(cfg.seed), config)?;
    for (p, b) in &cfg_inputs {
        w.record_input(Path::new(p), b);
    }
    w.record_input(&a.input, &bytes);
    w.set_transform(serde_json::to_value(&model.squash)?);
    w.json("model.json", &model)?;
    w.finish()?;
    println!("training mse (before squash): {}", sig6(mse));
    if let ModelForm::Linear { weights, bias } = &model.form {
        println!("weights: {} bias: {}", sig6_list(weights), sig6(*bias));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AttributeConfig {
    /// Draws per coalition for emshap.
    k: usize,
    /// Permutations for sampling, and for emshap beyond 20 features.
    permutations: usize,
    /// Sampled coalitions for kernel.
    kernel_budget: usize,
    background_policy: BackgroundPolicy,
    seed: u64,
}

impl Default for AttributeConfig {
    fn default() -> Self {
        Self {
            k: 1000,
            permutations: 200,
            kernel_budget: 2048,
            background_policy: BackgroundPolicy::RandomRow,
            seed: 0,
        }
    }
}

pub fn attribute(a: AttributeArgs) -> Result<()> {
    let mut cfg_inputs = Vec::new();
    let mut cfg: AttributeConfig = load_config(&a.common, &mut cfg_inputs)?;
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    if let Some(k) = a.k {
        match a.estimator {
            EstimatorArg::Emshap => cfg.k = k,
            EstimatorArg::Sampling => cfg.permutations = k,
            EstimatorArg::Kernel => cfg.kernel_budget = k,
            EstimatorArg::Exact => {}
        }
    }
    if cfg.k == 0 || cfg.permutations == 0 || cfg.kernel_budget == 0 {
        return Err(Error::Config("K, permutation count and kernel budget must be positive".into()).into());
    }
    if a.estimator == EstimatorArg::Emshap && a.emshap.is_none() {
        return Err(Error::Usage("--estimator emshap needs --emshap <checkpoint>".into()).into());
    }

    let (model, model_bytes) = load_model(&a.model)?;
    let (input, input_bytes) = load_csv(&a.input, a.target.as_deref())?;
    let mut rows = input.rows;
    limit_rows(&mut rows, a.rows);
    let background = match &a.background {
        Some(p) => Some(load_csv(p, a.target.as_deref())?),
        None => None,
    };
    let bg_rows: &[Vec<f64>] = background.as_ref().map(|(d, _)| d.rows.as_slice()).unwrap_or(&rows);
    let checkpoint = match &a.emshap {
        Some(p) => {
            let (c, b): (Checkpoint, _) = read_json(p, "checkpoint")?;
            c.model.validate()?;
            Some((c, b))
        }
        None => None,
    };

    let seed = cfg.seed;
    let results = run_pool(rows.len(), |i| {
        let x = &rows[i];
        let mut rng = row_rng(seed, i);
        let mut r = match a.estimator {
            EstimatorArg::Exact => exact_shapley(&MarginalOracle::new(&model, bg_rows, x)?)?,
            EstimatorArg::Sampling => sampling_shap(&model, bg_rows, x, cfg.permutations, cfg.background_policy, &mut rng)?,
            EstimatorArg::Kernel => kernel_shap(&model, bg_rows, x, cfg.kernel_budget, &mut rng)?,
            EstimatorArg::Emshap => {
                let (ckpt, _) = checkpoint.as_ref().expect("checked above");
                let scaled = Rescaled {
                    inner: &model,
                    norm: &ckpt.normalization,
                };
                let z = ckpt.normalization.apply(x);
                let opts = EmShapOptions {
                    k: cfg.k,
                    permutations: cfg.permutations,
                };
                emshap_attribute(&scaled, &ckpt.model, &z, &opts, &mut rng)?
            }
        };
        r.sample_id = i;
        if a.estimator != EstimatorArg::Exact {
            r.seed = Some(seed);
        }
        Ok(r)
    })?;

    let mut w = Writer::new(&a.common.out, "attribute", Some(seed), serde_json::to_value(&cfg)?)?;
    for (p, b) in &cfg_inputs {
        w.record_input(Path::new(p), b);
    }
    w.record_input(&a.model, &model_bytes);
    w.record_input(&a.input, &input_bytes);
    if let (Some(p), Some((_, b))) = (&a.background, &background) {
        w.record_input(p, b);
    }
    if let (Some(p), Some((_, b))) = (&a.emshap, &checkpoint) {
        w.record_input(p, b);
    }
    w.set_transform(serde_json::to_value(&model.squash)?);
    w.json("attributions.json", &results)?;
    w.finish()?;
    for r in results.iter().take(5) {
        println!("row {}: phi0 {} phi {}", r.sample_id, sig6(r.phi0), sig6_list(&r.phi));
    }
    if results.len() > 5 {
        println!("... {} rows in total", results.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct RowEvaluation {
    sample_id: usize,
    add_auc: f64,
    del_auc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mad: Option<f64>,
}

#[derive(Serialize)]
struct EvaluationReport {
    rows: Vec<RowEvaluation>,
    mean_add_auc: f64,
    mean_del_auc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_mad: Option<f64>,
}

fn mean_curve(curves: &[SicCurve]) -> SicCurve {
    let n = curves.len() as f64;
    let mut out = curves[0].clone();
    for (j, o) in out.outputs.iter_mut().enumerate() {
        *o = curves.iter().map(|c| c.outputs[j]).sum::<f64>() / n;
    }
    out.auc = curves.iter().map(|c| c.auc).sum::<f64>() / n;
    out
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let steps = a.steps.unwrap_or(0);
    let (model, model_bytes) = load_model(&a.model)?;
    let (input, input_bytes) = load_csv(&a.input, a.target.as_deref())?;
    let (attrs, attr_bytes): (Vec<AttributionResult>, _) = read_json(&a.attributions, "attributions")?;
    let reference = match &a.reference {
        Some(p) => Some(read_json::<Vec<AttributionResult>>(p, "reference attributions")?),
        None => None,
    };
    let background = match &a.background {
        Some(p) => Some(load_csv(p, a.target.as_deref())?),
        None => None,
    };
    if attrs.is_empty() {
        return Err(Error::Data("attribution file is empty".into()).into());
    }
    let d = model.features();
    let steps = if steps == 0 { d + 1 } else { steps };
    let bg_mean = background.as_ref().map(|(b, _)| b.column_means()).unwrap_or_else(|| input.column_means());

    let mut rows = Vec::with_capacity(attrs.len());
    let mut adds = Vec::new();
    let mut dels = Vec::new();
    for r in &attrs {
        let x = input
            .rows
            .get(r.sample_id)
            .ok_or_else(|| Error::Data(format!("sample_id {} has no input row", r.sample_id)))?;
        let add = sic_auc(&model, x, &r.phi, &bg_mean, SicDirection::Add, steps)?;
        let del = sic_auc(&model, x, &r.phi, &bg_mean, SicDirection::Del, steps)?;
        let m = match &reference {
            Some((refs, _)) => {
                let other = refs
                    .iter()
                    .find(|o| o.sample_id == r.sample_id)
                    .ok_or_else(|| Error::Data(format!("reference has no sample_id {}", r.sample_id)))?;
                Some(mad(&r.phi, &other.phi)?)
            }
            None => None,
        };
        rows.push(RowEvaluation {
            sample_id: r.sample_id,
            add_auc: add.auc,
            del_auc: del.auc,
            mad: m,
        });
        adds.push(add);
        dels.push(del);
    }
    let n = rows.len() as f64;
    let report = EvaluationReport {
        mean_add_auc: rows.iter().map(|r| r.add_auc).sum::<f64>() / n,
        mean_del_auc: rows.iter().map(|r| r.del_auc).sum::<f64>() / n,
        mean_mad: reference.as_ref().map(|_| rows.iter().filter_map(|r| r.mad).sum::<f64>() / n),
        rows,
    };

    let config = serde_json::json!({ "steps": steps, "background": if a.background.is_some() { "file" } else { "input" } });
    let mut w = Writer::new(&a.common.out, "evaluate", a.common.seed, config)?;
    w.record_input(&a.model, &model_bytes);
    w.record_input(&a.input, &input_bytes);
    w.record_input(&a.attributions, &attr_bytes);
    if let (Some(p), Some((_, b))) = (&a.reference, &reference) {
        w.record_input(p, b);
    }
    if let (Some(p), Some((_, b))) = (&a.background, &background) {
        w.record_input(p, b);
    }
    w.set_transform(serde_json::to_value(&model.squash)?);
    w.json("evaluation.json", &report)?;
    w.text("sic_add.csv", &mean_curve(&adds).to_csv())?;
    w.text("sic_del.csv", &mean_curve(&dels).to_csv())?;
    w.finish()?;
    println!("SIC ADD AUC: {}", sig6(report.mean_add_auc));
    println!("SIC DEL AUC: {}", sig6(report.mean_del_auc));
    if let Some(m) = report.mean_mad {
        println!("MAD: {}", sig6(m));
    }
    Ok(())
}

fn parse_k_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad K value {p:?}")).into())
        })
        .collect()
}

pub fn toy_bound(a: ToyBoundArgs) -> Result<()> {
    let mut cfg_inputs = Vec::new();
    let mut cfg: ToyConfig = load_config(&a.common, &mut cfg_inputs)?;
    if let Some(v) = a.common.seed {
        cfg.seed = v;
        cfg.train.seed = v;
    }
    if let Some(s) = &a.k {
        cfg.k_values = parse_k_list(s)?;
    }
    if let Some(v) = a.k_ref {
        cfg.k_ref = v;
    }
    if let Some(v) = a.test_points {
        cfg.test_points = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.k_tilde {
        cfg.train.k_tilde = v;
    }
    if let Some(v) = a.zeta_min {
        cfg.train.zeta_min = v;
    }
    if let Some(v) = a.zeta_max {
        cfg.train.zeta_max = v;
    }
    cfg.validate()?;

    let (report, train) = toy_bound_experiment(&cfg)?;
    let mut w = Writer::new(&a.common.out, "toy-bound", Some(cfg.seed), serde_json::to_value(&cfg)?)?;
    for (p, b) in &cfg_inputs {
        w.record_input(Path::new(p), b);
    }
    w.text("bound.csv", &report.to_csv())?;
    w.json("report.json", &report)?;
    w.text("loss.csv", &train.loss_csv())?;
    w.finish()?;
    println!("K,statistical_error,approximation_error,bound");
    for s in &report.summary {
        println!("{},{},{},{}", s.k, sig6(s.statistical_error), sig6(s.approximation_error), sig6(s.bound));
    }
    println!("slope: {}", sig6(report.slope));
    println!("bound holds everywhere: {}", report.all_within_bound);
    Ok(())
}

#[derive(Serialize)]
struct TheoryRow {
    d: usize,
    alpha: f64,
    inverse_deviation: f64,
}

pub fn theory_check(a: TheoryArgs) -> Result<()> {
    let ds: Vec<usize> = match a.d {
        Some(d) => vec![d],
        None => (2..=10).collect(),
    };
    let rows = ds
        .iter()
        .map(|&d| {
            Ok(TheoryRow {
                d,
                alpha: alpha(d)?,
                inverse_deviation: sigma_star_inverse_check(d)?,
            })
        })
        .collect::<emshap::Result<Vec<_>>>()?;
    let mut w = Writer::new(&a.common.out, "theory-check", None, serde_json::json!({ "d": ds }))?;
    w.json("theory.json", &rows)?;
    w.finish()?;
    for r in &rows {
        println!("d={} alpha={} inverse_deviation={}", r.d, sig6(r.alpha), sig6(r.inverse_deviation));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GameTable {
    players: usize,
    /// Indexed by the bitmask of present players.
    values: Vec<f64>,
}

pub fn exact_shapley_cmd(a: ExactArgs) -> Result<()> {
    let mut w;
    let results = if let Some(path) = &a.game {
        let (table, bytes): (GameTable, _) = read_json(path, "game")?;
        if table.players == 0 || table.players > emshap::shapley::ENUMERATION_LIMIT {
            return Err(Error::Capacity {
                players: table.players,
                limit: emshap::shapley::ENUMERATION_LIMIT,
            }
            .into());
        }
        if table.values.len() != 1usize << table.players {
            return Err(Error::Data(format!(
                "{} players need {} values, got {}",
                table.players,
                1usize << table.players,
                table.values.len()
            ))
            .into());
        }
        let values = table.values;
        let game = FnGame::new(table.players, move |bits| values[bits as usize]);
        w = Writer::new(&a.common.out, "exact-shapley", None, serde_json::json!({ "mode": "game" }))?;
        w.record_input(path, &bytes);
        vec![exact_shapley(&game)?]
    } else {
        let (mpath, ipath) = match (&a.model, &a.input) {
            (Some(m), Some(i)) => (m, i),
            _ => return Err(Error::Usage("give either --game or --model with --input".into()).into()),
        };
        let (model, model_bytes) = load_model(mpath)?;
        let (input, input_bytes) = load_csv(ipath, a.target.as_deref())?;
        let mut rows = input.rows;
        limit_rows(&mut rows, a.rows);
        let background = match &a.background {
            Some(p) => Some(load_csv(p, a.target.as_deref())?),
            None => None,
        };
        let bg_rows: &[Vec<f64>] = background.as_ref().map(|(d, _)| d.rows.as_slice()).unwrap_or(&rows);
        let results = run_pool(rows.len(), |i| {
            let mut r = exact_shapley(&MarginalOracle::new(&model, bg_rows, &rows[i])?)?;
            r.sample_id = i;
            Ok(r)
        })?;
        w = Writer::new(&a.common.out, "exact-shapley", None, serde_json::json!({ "mode": "model" }))?;
        w.record_input(mpath, &model_bytes);
        w.record_input(ipath, &input_bytes);
        if let (Some(p), Some((_, b))) = (&a.background, &background) {
            w.record_input(p, b);
        }
        w.set_transform(serde_json::to_value(&model.squash)?);
        results
    };
    w.json("attributions.json", &results)?;
    w.finish()?;
    for r in results.iter().take(5) {
        println!("phi0 {} phi {}", sig6(r.phi0), sig6_list(&r.phi));
    }
    Ok(())
}
