//! Command implementations, shared by the binary and the ablation driver.
//!
//! The ablation rows are produced by composing exactly these functions, so
//! every table cell exercises the same code path as the individual verbs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mlr_core::cae::{build_cae, count_parameters, stack_batch, train_cae, CAEArchitecture, CAEModel};
use mlr_core::gradcheck::run_standard_suite;
use mlr_core::logreg::{train_one_vs_all, TaskModel};
use mlr_core::metrics::{evaluate_task, MetricsReport};
use mlr_core::pipeline::{
    apply_scalers, fit_scalers, slice_modalities, Labels, Modality, UtteranceRecord,
};
use mlr_core::synth::{synth_generate, SynthConfig};
use mlr_core::Tensor;

use crate::config::{LabelConfig, RunConfig};
use crate::dataset::{load_split, save_split};
use crate::error::{CliError, Result};
use crate::model_io::{
    load_classifier, load_embeddings, load_model, quantize_scalers, save_classifier,
    save_embeddings, save_model, SavedEmbeddings,
};

pub const EMOTION_NAMES: [&str; 4] = ["happy", "sad", "angry", "neutral"];
const EVAL_BATCH: usize = 64;

/// `mlr synth`: generate a synthetic dataset and write its three splits.
pub fn run_synth(cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    let widths = &cfg.synth.widths;
    if widths.len() != 3 {
        return Err(CliError::Config(format!(
            "synth.widths needs exactly 3 entries, got {}",
            widths.len()
        )));
    }
    let signal_blocks = cfg.parse_modalities(&cfg.synth.signal_blocks)?;
    let sc = SynthConfig {
        n_utterances: cfg.synth.n_utterances,
        class_count: cfg.synth.class_count,
        noise_std: cfg.synth.noise_std,
        feature_noise_std: cfg.synth.feature_noise_std,
        modality_widths: (widths[0], widths[1], widths[2]),
        signal_blocks,
        timesteps: cfg.synth.timesteps,
        seed: cfg.seed,
        dataset_name: cfg.synth.name.clone(),
    };
    let ds = synth_generate(&sc).map_err(CliError::from)?;
    let dir = out_dir.join(&cfg.synth.name);
    for (split, records) in ds.splits() {
        save_split(&dir, &cfg.synth.name, split, records)?;
    }
    Ok(dir)
}

fn load_sliced_split(
    cfg: &RunConfig,
    dataset: &str,
    split: &str,
    modalities: &[Modality],
) -> Result<Vec<UtteranceRecord>> {
    let dref = cfg.dataset_ref(dataset)?;
    let records = load_split(&dref.dir, split, cfg.data.limit)?;
    records
        .into_iter()
        .map(|r| {
            let (x, widths) = slice_modalities(&r.x, r.block_widths, modalities)?;
            UtteranceRecord::new(x, widths, r.labels, r.id, r.source_dataset)
        })
        .collect::<mlr_core::Result<_>>()
        .map_err(CliError::from)
}

pub struct TrainCaeOutput {
    pub weights: PathBuf,
    pub history: PathBuf,
    /// Validation MSE of the returned (best) weights.
    pub best_val_mse: f64,
    pub code_len: usize,
}

/// `mlr train-cae`: pretrain the autoencoder on the configured datasets.
///
/// Train splits of every dataset in `train_on` are pooled for fitting, their
/// validation splits form the multi-dataset validation set, scalers are
/// fitted on the pooled train split only, and the weights container receives
/// model, stats, scalers and metadata.
pub fn run_train_cae(
    cfg: &RunConfig,
    train_on: &[String],
    modalities: &[Modality],
    out_dir: &Path,
) -> Result<TrainCaeOutput> {
    if train_on.is_empty() {
        return Err(CliError::Config("no pretraining datasets configured".into()));
    }
    let mut train_records = Vec::new();
    let mut val_records = Vec::new();
    let mut dataset_widths = None;
    for name in train_on {
        let dref = cfg.dataset_ref(name)?;
        let raw_train = load_split(&dref.dir, "train", cfg.data.limit)?;
        if let Some(first) = raw_train.first() {
            match dataset_widths {
                None => dataset_widths = Some(first.block_widths),
                Some(w) if w == first.block_widths => {}
                Some(w) => {
                    return Err(CliError::Data(format!(
                        "dataset '{name}' has block widths {:?}, expected {w:?}",
                        first.block_widths
                    )))
                }
            }
        }
        train_records.extend(load_sliced_split(cfg, name, "train", modalities)?);
        val_records.extend(load_sliced_split(cfg, name, "val", modalities)?);
    }
    if train_records.is_empty() || val_records.is_empty() {
        return Err(CliError::Data("empty train or validation split".into()));
    }
    let dataset_widths = dataset_widths.unwrap();
    let timesteps = train_records[0].timesteps();
    let m = train_records[0].feature_width();
    for r in train_records.iter().chain(&val_records) {
        if r.timesteps() != timesteps || r.feature_width() != m {
            return Err(CliError::Data(format!(
                "utterance '{}' has inconsistent dims {}x{}",
                r.id,
                r.timesteps(),
                r.feature_width()
            )));
        }
    }

    let fitted_on = format!("train:{}", train_on.join("+"));
    let mut scalers = fit_scalers(&train_records, &fitted_on).map_err(CliError::from)?;
    quantize_scalers(&mut scalers);

    let normalize = |records: &[UtteranceRecord]| -> Result<Vec<Tensor>> {
        records
            .iter()
            .map(|r| apply_scalers(&r.x, &scalers).map_err(CliError::from))
            .collect()
    };
    let train_x = normalize(&train_records)?;
    let val_x = normalize(&val_records)?;

    let mut arch = CAEArchitecture::reference(cfg.train.full_batchnorm);
    arch.bn_momentum = cfg.train.bn_momentum;
    let tc = cfg.train_config();
    let model = build_cae((timesteps, m), &arch, cfg.seed, cfg.train.init_std)
        .map_err(CliError::from)?;
    let model = train_cae(model, &train_x, &val_x, &tc).map_err(CliError::from)?;

    fs::create_dir_all(out_dir)?;
    let weights = out_dir.join("cae.mlrw");
    save_model(
        &weights,
        &model,
        &scalers,
        modalities,
        dataset_widths,
        cfg.precision,
        false,
    )?;
    let history = out_dir.join("history.csv");
    let mut csv = String::from("epoch,train_mse,val_mse,lr\n");
    for e in &model.history {
        let _ = writeln!(csv, "{},{},{},{}", e.epoch, e.train_mse, e.val_mse, e.lr);
    }
    fs::write(&history, csv)?;

    let best_val_mse = model
        .history
        .iter()
        .map(|e| e.val_mse)
        .fold(f64::INFINITY, f64::min);
    Ok(TrainCaeOutput {
        weights,
        history,
        best_val_mse,
        code_len: model.code_len(),
    })
}

pub struct EmbedOutput {
    pub path: PathBuf,
    pub count: usize,
    pub code_len: usize,
}

/// `mlr embed`: apply the embedded scalers and encoder to one dataset split.
pub fn run_embed(
    weights: &Path,
    data_dir: &Path,
    split: &str,
    limit: usize,
    out_file: &Path,
) -> Result<EmbedOutput> {
    let saved = load_model(weights)?;
    let records = load_split(data_dir, split, limit)?;
    if records.is_empty() {
        return Err(CliError::Data(format!(
            "split '{split}' in {} is empty",
            data_dir.display()
        )));
    }
    if records[0].block_widths != saved.dataset_widths {
        return Err(CliError::Data(format!(
            "dataset/model incompatible: dataset block widths {:?} vs model's expected {:?}",
            records[0].block_widths, saved.dataset_widths
        )));
    }
    let mut rows: Vec<Tensor> = Vec::with_capacity(records.len());
    for r in &records {
        let (x, _) = slice_modalities(&r.x, r.block_widths, &saved.modalities)
            .map_err(CliError::from)?;
        rows.push(apply_scalers(&x, &saved.scalers).map_err(CliError::from)?);
    }
    let k = saved.model.code_len();
    let mut emb = Tensor::zeros(&[records.len(), k]);
    let mut row0 = 0;
    for chunk in rows.chunks(EVAL_BATCH) {
        let batch = stack_batch(chunk).map_err(CliError::from)?;
        let codes = saved.model.encode(&batch).map_err(CliError::from)?;
        emb.data_mut()[row0 * k..(row0 + chunk.len()) * k].copy_from_slice(codes.data());
        row0 += chunk.len();
    }
    let dataset = records[0].source_dataset.clone();
    if let Some(parent) = out_file.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    save_embeddings(out_file, &emb, &records, &dataset, split)?;
    Ok(EmbedOutput {
        path: out_file.to_path_buf(),
        count: records.len(),
        code_len: k,
    })
}

/// Task name -> binary labels, applying the configured sentiment rule.
/// Returns the kept row indices (neutral exclusion drops rows).
pub fn label_columns(
    labels: &[Labels],
    cfg: &LabelConfig,
) -> Result<(Vec<usize>, Vec<(String, Vec<bool>)>)> {
    match cfg.task.as_str() {
        "sentiment" => {
            let mut kept = Vec::new();
            let mut col = Vec::new();
            for (i, l) in labels.iter().enumerate() {
                let s = l.sentiment.ok_or_else(|| {
                    CliError::Data(format!("utterance {i} has no sentiment label"))
                })?;
                if cfg.exclude_neutral && s == 0.0 {
                    continue;
                }
                kept.push(i);
                col.push(if cfg.positive_rule == "ge" { s >= 0.0 } else { s > 0.0 });
            }
            if kept.is_empty() {
                return Err(CliError::Data("no utterances left after neutral exclusion".into()));
            }
            Ok((kept, vec![("sentiment".to_string(), col)]))
        }
        "emotions" => {
            let mut cols: Vec<(String, Vec<bool>)> = EMOTION_NAMES
                .iter()
                .map(|n| (n.to_string(), Vec::new()))
                .collect();
            for (i, l) in labels.iter().enumerate() {
                let e = l.emotions.ok_or_else(|| {
                    CliError::Data(format!("utterance {i} has no emotion labels"))
                })?;
                for (c, &flag) in cols.iter_mut().zip(e.iter()) {
                    c.1.push(flag);
                }
            }
            Ok(((0..labels.len()).collect(), cols))
        }
        other => Err(CliError::Config(format!("unknown label task '{other}'"))),
    }
}

fn select_rows(emb: &Tensor, kept: &[usize]) -> Result<Tensor> {
    let (_, k) = emb.dims2("select_rows").map_err(CliError::from)?;
    let mut data = Vec::with_capacity(kept.len() * k);
    for &i in kept {
        data.extend_from_slice(&emb.data()[i * k..(i + 1) * k]);
    }
    Tensor::new(vec![kept.len(), k], data).map_err(CliError::from)
}

pub struct TrainEvalOutput {
    pub report: MetricsReport,
    pub classifier: PathBuf,
    pub report_path: PathBuf,
    /// Tasks that could not be trained (single-class columns), by name.
    pub failed_tasks: Vec<(String, String)>,
}

/// `mlr train-clf`: fit logistic-regression heads on train embeddings and
/// score them on test embeddings.
pub fn run_train_eval(
    cfg: &RunConfig,
    train_emb_path: &Path,
    test_emb_path: &Path,
    out_dir: &Path,
) -> Result<TrainEvalOutput> {
    let train = load_embeddings(train_emb_path)?;
    let test = load_embeddings(test_emb_path)?;
    let k_train = train.embeddings.dims()[1];
    let k_test = test.embeddings.dims()[1];
    if k_train != k_test {
        return Err(CliError::Data(format!(
            "embedding widths differ: train K={k_train}, test K={k_test}"
        )));
    }
    let (kept_train, cols_train) = label_columns(&train.labels, &cfg.labels)?;
    let (kept_test, cols_test) = label_columns(&test.labels, &cfg.labels)?;
    let x_train = select_rows(&train.embeddings, &kept_train)?;
    let x_test = select_rows(&test.embeddings, &kept_test)?;

    let lr_cfg = cfg.logreg_config();
    let outcomes = train_one_vs_all(&x_train, &cols_train, &lr_cfg);
    let mut tasks: Vec<TaskModel> = Vec::new();
    let mut failed = Vec::new();
    for ((name, _), outcome) in cols_train.iter().zip(outcomes) {
        match outcome {
            Ok(t) => tasks.push(t),
            Err(e) => failed.push((name.clone(), e.to_string())),
        }
    }
    if tasks.is_empty() {
        return Err(CliError::Data(format!(
            "no task could be trained: {}",
            failed
                .iter()
                .map(|(n, e)| format!("{n}: {e}"))
                .collect::<Vec<_>>()
                .join("; ")
        )));
    }

    let mut report = MetricsReport::default();
    for t in &tasks {
        let labels = &cols_test.iter().find(|(n, _)| *n == t.name).unwrap().1;
        let (_, preds) = t
            .predict(&x_test, cfg.labels.threshold)
            .map_err(CliError::from)?;
        report
            .tasks
            .push(evaluate_task(&t.name, &preds, labels).map_err(CliError::from)?);
    }

    fs::create_dir_all(out_dir)?;
    let classifier = out_dir.join("classifier.mlrw");
    save_classifier(
        &classifier,
        &tasks,
        &cfg.labels.task,
        &cfg.labels.positive_rule,
        cfg.labels.exclude_neutral,
        cfg.labels.threshold,
    )?;
    let report_path = out_dir.join("report.csv");
    fs::write(&report_path, metrics_csv(&report))?;
    Ok(TrainEvalOutput {
        report,
        classifier,
        report_path,
        failed_tasks: failed,
    })
}

/// `mlr eval`: score an existing classifier on an embeddings file.
pub fn run_eval(
    classifier_path: &Path,
    emb_path: &Path,
    report_path: Option<&Path>,
) -> Result<MetricsReport> {
    let clf = load_classifier(classifier_path)?;
    let emb: SavedEmbeddings = load_embeddings(emb_path)?;
    let label_cfg = LabelConfig {
        task: clf.task_kind.clone(),
        positive_rule: clf.positive_rule.clone(),
        exclude_neutral: clf.exclude_neutral,
        threshold: clf.threshold,
    };
    let (kept, cols) = label_columns(&emb.labels, &label_cfg)?;
    let x = select_rows(&emb.embeddings, &kept)?;
    let mut report = MetricsReport::default();
    for t in &clf.tasks {
        let labels = &cols
            .iter()
            .find(|(n, _)| *n == t.name)
            .ok_or_else(|| CliError::Data(format!("no labels for task '{}'", t.name)))?
            .1;
        let (_, preds) = t.predict(&x, clf.threshold).map_err(CliError::from)?;
        report
            .tasks
            .push(evaluate_task(&t.name, &preds, labels).map_err(CliError::from)?);
    }
    if let Some(p) = report_path {
        if let Some(parent) = p.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(p, metrics_csv(&report))?;
    }
    Ok(report)
}

pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut out = String::from("task,acc2,weighted_f1,tp,fp,fn,tn,n\n");
    for t in &report.tasks {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            t.task,
            t.accuracy,
            t.weighted_f1,
            t.confusion.tp,
            t.confusion.fp,
            t.confusion.fn_,
            t.confusion.tn,
            t.n_evaluated
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub combination: String,
    pub val_mse: f64,
    pub acc2: f64,
    pub weighted_f1: f64,
}

/// One pretrain -> embed -> classify pipeline for a given modality subset
/// and dataset combination; the building block of every ablation row.
fn ablation_cell(
    cfg: &RunConfig,
    train_on: &[String],
    modalities: &[Modality],
    label: &str,
    out_dir: &Path,
) -> Result<AblationRow> {
    let eval_on = cfg
        .data
        .eval_on
        .clone()
        .ok_or_else(|| CliError::Config("ablate needs data.eval_on".into()))?;
    let eval_dir = cfg.dataset_ref(&eval_on)?.dir.clone();
    let cell_dir = out_dir.join(label);
    let trained = run_train_cae(cfg, train_on, modalities, &cell_dir)?;
    let train_emb = run_embed(
        &trained.weights,
        &eval_dir,
        "train",
        cfg.data.limit,
        &cell_dir.join("train_emb.mlrw"),
    )?;
    let _ = train_emb;
    let test_emb = run_embed(
        &trained.weights,
        &eval_dir,
        "test",
        cfg.data.limit,
        &cell_dir.join("test_emb.mlrw"),
    )?;
    let _ = test_emb;
    let evaled = run_train_eval(
        cfg,
        &cell_dir.join("train_emb.mlrw"),
        &cell_dir.join("test_emb.mlrw"),
        &cell_dir,
    )?;
    let n = evaled.report.tasks.len() as f64;
    let acc2 = evaled.report.tasks.iter().map(|t| t.accuracy).sum::<f64>() / n;
    let f1 = evaled.report.tasks.iter().map(|t| t.weighted_f1).sum::<f64>() / n;
    Ok(AblationRow {
        combination: label.to_string(),
        val_mse: trained.best_val_mse,
        acc2,
        weighted_f1: f1,
    })
}

/// `mlr ablate`: modality-subset rows then dataset-combination rows.
pub fn run_ablate(cfg: &RunConfig, out_dir: &Path) -> Result<(Vec<AblationRow>, PathBuf)> {
    if cfg.ablate.modality_subsets.is_empty() && cfg.ablate.dataset_combinations.is_empty() {
        return Err(CliError::Config(
            "ablate: configure modality_subsets and/or dataset_combinations".into(),
        ));
    }
    let mut rows = Vec::new();
    for subset in &cfg.ablate.modality_subsets {
        let modalities = cfg.parse_modalities(subset)?;
        let label = format!(
            "mod_{}",
            modalities.iter().map(|m| m.name()).collect::<Vec<_>>().join("+")
        );
        rows.push(ablation_cell(cfg, &cfg.data.train_on, &modalities, &label, out_dir)?);
    }
    let modalities = cfg.parse_modalities(&cfg.data.modalities)?;
    for combo in &cfg.ablate.dataset_combinations {
        if combo.is_empty() {
            return Err(CliError::Config("empty dataset combination".into()));
        }
        for name in combo {
            cfg.dataset_ref(name)?;
        }
        let label = format!("data_{}", combo.join("+"));
        rows.push(ablation_cell(cfg, combo, &modalities, &label, out_dir)?);
    }

    let mut csv = String::from("combination,val_mse,acc2,weighted_f1\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{}", r.combination, r.val_mse, r.acc2, r.weighted_f1);
    }
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join("ablation.csv");
    fs::write(&path, csv)?;
    Ok((rows, path))
}

/// `mlr count-params`: per-tensor counts plus section totals and the
/// extractor+head sums for 1-task and 4-task downstreams.
pub fn run_count_params(cfg: &RunConfig, weights: Option<&Path>) -> Result<String> {
    let model: CAEModel = match weights {
        Some(p) => load_model(p)?.model,
        None => {
            let mut arch = CAEArchitecture::reference(cfg.train.full_batchnorm);
            arch.bn_momentum = cfg.train.bn_momentum;
            build_cae((20, 409), &arch, cfg.seed, cfg.train.init_std).map_err(CliError::from)?
        }
    };
    let b = count_parameters(&model);
    let k = model.code_len();
    let mut out = String::from("name,count\n");
    for (name, n) in &b.rows {
        let _ = writeln!(out, "{name},{n}");
    }
    let _ = writeln!(out, "encoder_total,{}", b.encoder_total);
    let _ = writeln!(out, "decoder_total,{}", b.decoder_total);
    let _ = writeln!(out, "model_total,{}", b.total);
    let _ = writeln!(out, "code_len,{k}");
    let _ = writeln!(out, "encoder_plus_lr_1task,{}", b.encoder_total + k + 1);
    let _ = writeln!(out, "encoder_plus_lr_4task,{}", b.encoder_total + 4 * (k + 1));
    Ok(out)
}

/// `mlr gradcheck`: per-layer finite-difference report; Err on any failure.
pub fn run_gradcheck(inject_fault: bool) -> (String, bool) {
    let checks = run_standard_suite(inject_fault);
    let mut out = String::from("layer,max_rel_err,pass\n");
    let mut all_pass = true;
    for c in &checks {
        let _ = writeln!(out, "{},{:e},{}", c.layer, c.max_rel_err, c.pass);
        all_pass &= c.pass;
    }
    (out, all_pass)
}
