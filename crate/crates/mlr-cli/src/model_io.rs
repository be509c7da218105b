//! Model, embedding and classifier persistence on top of the MLRW container.
//!
//! A weights file is self-sufficient for encoding new data: it embeds the
//! architecture, every parameter, the batchnorm running statistics, the
//! fitted scalers and the modality subset the model was trained on.

use std::path::Path;

use mlr_core::cae::{build_cae, CAEArchitecture, CAEModel};
use mlr_core::logreg::{ConvergenceReport, TaskModel};
use mlr_core::ops::{Activation, ConvLayerSpec, RunningStats};
use mlr_core::pipeline::{Labels, Modality, NormalizationStats, UtteranceRecord};
use mlr_core::Tensor;

use crate::container::{Container, TensorData};
use crate::error::{CliError, Result};

/// A loaded weights artifact.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub model: CAEModel,
    pub scalers: NormalizationStats,
    /// Modality subset the model consumes, in canonical order.
    pub modalities: Vec<Modality>,
    /// Full dataset block widths expected before slicing.
    pub dataset_widths: (usize, usize, usize),
    pub encoder_only: bool,
    pub precision: u32,
}

fn act_code(a: Activation) -> f64 {
    match a {
        Activation::Identity => 0.0,
        Activation::Gelu => 1.0,
        Activation::Sigmoid => 2.0,
    }
}

fn act_from(code: f64) -> Result<Activation> {
    match code as i64 {
        0 => Ok(Activation::Identity),
        1 => Ok(Activation::Gelu),
        2 => Ok(Activation::Sigmoid),
        other => Err(CliError::Data(format!("unknown activation code {other}"))),
    }
}

fn spec_row(s: &ConvLayerSpec) -> TensorData {
    TensorData::vector(&[
        s.in_channels as f64,
        s.out_channels as f64,
        s.kernel.0 as f64,
        s.kernel.1 as f64,
        s.padding.0 as f64,
        s.padding.1 as f64,
        s.stride.0 as f64,
        s.stride.1 as f64,
        s.has_batchnorm as i64 as f64,
        act_code(s.activation),
    ])
}

fn spec_from(row: &TensorData) -> Result<ConvLayerSpec> {
    let v = row.to_f64();
    if v.len() != 10 {
        return Err(CliError::Data(format!(
            "architecture row has {} fields, expected 10",
            v.len()
        )));
    }
    Ok(ConvLayerSpec {
        in_channels: v[0] as usize,
        out_channels: v[1] as usize,
        kernel: (v[2] as usize, v[3] as usize),
        padding: (v[4] as usize, v[5] as usize),
        stride: (v[6] as usize, v[7] as usize),
        has_batchnorm: v[8] != 0.0,
        activation: act_from(v[9])?,
    })
}

/// Serializes the model (optionally encoder-only) with scalers and metadata.
pub fn save_model(
    path: &Path,
    model: &CAEModel,
    scalers: &NormalizationStats,
    modalities: &[Modality],
    dataset_widths: (usize, usize, usize),
    precision: u32,
    encoder_only: bool,
) -> Result<()> {
    let mut c = Container::new();
    c.insert(
        "arch/meta",
        TensorData::vector(&[
            model.arch.encoder.len() as f64,
            model.arch.decoder.len() as f64,
            model.input_dims.0 as f64,
            model.input_dims.1 as f64,
            model.arch.bn_momentum,
            encoder_only as i64 as f64,
            precision as f64,
        ]),
    )?;
    for (i, s) in model.arch.encoder.iter().enumerate() {
        c.insert(format!("arch/enc{}", i + 1), spec_row(s))?;
    }
    for (i, s) in model.arch.decoder.iter().enumerate() {
        c.insert(format!("arch/dec{}", i + 1), spec_row(s))?;
    }
    c.insert(
        "meta/modalities",
        TensorData::vector(&[
            modalities.contains(&Modality::Audio) as i64 as f64,
            modalities.contains(&Modality::Vision) as i64 as f64,
            modalities.contains(&Modality::Text) as i64 as f64,
        ]),
    )?;
    c.insert(
        "meta/dataset_widths",
        TensorData::vector(&[
            dataset_widths.0 as f64,
            dataset_widths.1 as f64,
            dataset_widths.2 as f64,
        ]),
    )?;

    for p in model.parameters() {
        if encoder_only && p.name.starts_with("dec") {
            continue;
        }
        c.insert(p.name.clone(), TensorData::from_f64(p.value.dims(), p.value.data()))?;
    }
    for (stage, stats) in model.bn_states() {
        if encoder_only && stage.starts_with("dec") {
            continue;
        }
        c.insert(format!("stats/{stage}/mean"), TensorData::vector(&stats.mean))?;
        c.insert(format!("stats/{stage}/var"), TensorData::vector(&stats.var))?;
        c.insert(
            format!("stats/{stage}/updates"),
            TensorData::scalar(stats.updates as f64),
        )?;
    }

    c.insert("scaler/mean", TensorData::vector(&scalers.mean))?;
    c.insert("scaler/std", TensorData::vector(&scalers.std))?;
    c.insert("scaler/min", TensorData::vector(&scalers.post_min))?;
    c.insert("scaler/max", TensorData::vector(&scalers.post_max))?;
    c.insert(
        "scaler/degenerate",
        TensorData::vector(
            &scalers
                .degenerate
                .iter()
                .map(|&b| b as i64 as f64)
                .collect::<Vec<_>>(),
        ),
    )?;
    c.insert(format!("scaler/fitted_on/{}", scalers.fitted_on), TensorData::scalar(1.0))?;

    c.save(path)
}

/// Restores a model from its container; the shape chain is recomputed from
/// the embedded architecture and input dims.
pub fn load_model(path: &Path) -> Result<SavedModel> {
    let c = Container::load(path)?;
    let meta = c.require("arch/meta")?.to_f64();
    if meta.len() != 7 {
        return Err(CliError::Data("arch/meta has the wrong arity".into()));
    }
    let (n_enc, n_dec) = (meta[0] as usize, meta[1] as usize);
    let input_dims = (meta[2] as usize, meta[3] as usize);
    let encoder_only = meta[5] != 0.0;
    let precision = meta[6] as u32;

    let mut encoder = Vec::with_capacity(n_enc);
    for i in 0..n_enc {
        encoder.push(spec_from(c.require(&format!("arch/enc{}", i + 1))?)?);
    }
    let mut decoder = Vec::with_capacity(n_dec);
    for i in 0..n_dec {
        decoder.push(spec_from(c.require(&format!("arch/dec{}", i + 1))?)?);
    }
    let arch = CAEArchitecture {
        encoder,
        decoder,
        bn_momentum: meta[4],
    };
    let mut model = build_cae(input_dims, &arch, 0, 0.0).map_err(CliError::from)?;

    for p in model.parameters().iter().map(|p| p.name.clone()).collect::<Vec<_>>() {
        if encoder_only && p.starts_with("dec") {
            continue;
        }
        let t = c.require(&p)?;
        let tensor = Tensor::new(t.dims.clone(), t.to_f64()).map_err(CliError::from)?;
        model.set_parameter(&p, tensor).map_err(CliError::from)?;
    }
    let stages: Vec<String> = model.bn_states().iter().map(|(s, _)| s.clone()).collect();
    for stage in stages {
        if encoder_only && stage.starts_with("dec") {
            continue;
        }
        let mean = c.require(&format!("stats/{stage}/mean"))?.to_f64();
        let var = c.require(&format!("stats/{stage}/var"))?.to_f64();
        let updates = c.require(&format!("stats/{stage}/updates"))?.to_f64()[0] as u64;
        model
            .set_bn_state(&stage, RunningStats { mean, var, updates })
            .map_err(CliError::from)?;
    }

    let degenerate: Vec<bool> = c
        .require("scaler/degenerate")?
        .to_f64()
        .iter()
        .map(|&v| v != 0.0)
        .collect();
    let fitted_on = c
        .names()
        .find_map(|n| n.strip_prefix("scaler/fitted_on/"))
        .unwrap_or("unknown")
        .to_string();
    let scalers = NormalizationStats {
        mean: c.require("scaler/mean")?.to_f64(),
        std: c.require("scaler/std")?.to_f64(),
        post_min: c.require("scaler/min")?.to_f64(),
        post_max: c.require("scaler/max")?.to_f64(),
        degenerate,
        fitted_on,
    };
    if scalers.width() != input_dims.1 {
        return Err(CliError::Data(format!(
            "scaler width {} does not match model input width {}",
            scalers.width(),
            input_dims.1
        )));
    }

    let mflags = c.require("meta/modalities")?.to_f64();
    let mut modalities = Vec::new();
    for (flag, m) in mflags.iter().zip(Modality::ALL) {
        if *flag != 0.0 {
            modalities.push(m);
        }
    }
    let w = c.require("meta/dataset_widths")?.to_f64();
    Ok(SavedModel {
        model,
        scalers,
        modalities,
        dataset_widths: (w[0] as usize, w[1] as usize, w[2] as usize),
        encoder_only,
        precision,
    })
}

/// Rounds fitted scalers to their 32-bit persisted form so training-time and
/// embed-time normalization are bit-identical.
pub fn quantize_scalers(stats: &mut NormalizationStats) {
    for v in stats
        .mean
        .iter_mut()
        .chain(stats.std.iter_mut())
        .chain(stats.post_min.iter_mut())
        .chain(stats.post_max.iter_mut())
    {
        *v = *v as f32 as f64;
    }
}

/// Embeddings artifact: the `[B, K]` matrix plus per-utterance labels.
pub fn save_embeddings(
    path: &Path,
    embeddings: &Tensor,
    records: &[UtteranceRecord],
    dataset: &str,
    split: &str,
) -> Result<()> {
    let (b, _k) = embeddings.dims2("save_embeddings").map_err(CliError::from)?;
    if b != records.len() {
        return Err(CliError::Data(format!(
            "{b} embedding rows vs {} records",
            records.len()
        )));
    }
    let mut c = Container::new();
    c.insert("embeddings", TensorData::from_f64(embeddings.dims(), embeddings.data()))?;
    if records.iter().all(|r| r.labels.sentiment.is_some()) {
        let v: Vec<f64> = records.iter().map(|r| r.labels.sentiment.unwrap()).collect();
        c.insert("labels/sentiment", TensorData::vector(&v))?;
    }
    if records.iter().all(|r| r.labels.emotions.is_some()) {
        let v: Vec<f64> = records
            .iter()
            .flat_map(|r| r.labels.emotions.unwrap().map(|b| b as i64 as f64))
            .collect();
        c.insert(
            "labels/emotions",
            TensorData {
                dims: vec![records.len(), 4],
                data: v.iter().map(|&x| x as f32).collect(),
            },
        )?;
    }
    c.insert(format!("meta/dataset/{dataset}"), TensorData::scalar(1.0))?;
    c.insert(format!("meta/split/{split}"), TensorData::scalar(1.0))?;
    c.save(path)?;

    // human-readable sidecar manifest
    let manifest = format!(
        "format = MLR-EMB\ncount = {}\nk = {}\ndataset = {dataset}\nsplit = {split}\n",
        b,
        embeddings.dims()[1],
    );
    std::fs::write(path.with_extension("manifest"), manifest)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SavedEmbeddings {
    pub embeddings: Tensor,
    pub labels: Vec<Labels>,
    pub dataset: String,
    pub split: String,
}

pub fn load_embeddings(path: &Path) -> Result<SavedEmbeddings> {
    let c = Container::load(path)?;
    let e = c.require("embeddings")?;
    if e.dims.len() != 2 {
        return Err(CliError::Data("embeddings tensor is not rank 2".into()));
    }
    let b = e.dims[0];
    let embeddings = Tensor::new(e.dims.clone(), e.to_f64()).map_err(CliError::from)?;
    let sentiment = c.get("labels/sentiment").map(|t| t.to_f64());
    let emotions = c.get("labels/emotions").map(|t| t.to_f64());
    if let Some(s) = &sentiment {
        if s.len() != b {
            return Err(CliError::Data("sentiment labels have the wrong length".into()));
        }
    }
    if let Some(e4) = &emotions {
        if e4.len() != 4 * b {
            return Err(CliError::Data("emotion labels have the wrong length".into()));
        }
    }
    let labels = (0..b)
        .map(|i| Labels {
            sentiment: sentiment.as_ref().map(|s| s[i]),
            emotions: emotions.as_ref().map(|e4| {
                [
                    e4[i * 4] != 0.0,
                    e4[i * 4 + 1] != 0.0,
                    e4[i * 4 + 2] != 0.0,
                    e4[i * 4 + 3] != 0.0,
                ]
            }),
        })
        .collect();
    let dataset = c
        .names()
        .find_map(|n| n.strip_prefix("meta/dataset/"))
        .unwrap_or("unknown")
        .to_string();
    let split = c
        .names()
        .find_map(|n| n.strip_prefix("meta/split/"))
        .unwrap_or("unknown")
        .to_string();
    Ok(SavedEmbeddings {
        embeddings,
        labels,
        dataset,
        split,
    })
}

/// Classifier artifact: one `task/<name>/w` + `task/<name>/b` pair per head
/// plus label-rule metadata.
pub fn save_classifier(
    path: &Path,
    tasks: &[TaskModel],
    task_kind: &str,
    positive_rule: &str,
    exclude_neutral: bool,
    threshold: f64,
) -> Result<()> {
    let mut c = Container::new();
    for t in tasks {
        c.insert(format!("task/{}/w", t.name), TensorData::vector(&t.weights))?;
        c.insert(format!("task/{}/b", t.name), TensorData::scalar(t.bias))?;
    }
    c.insert(
        "meta/label",
        TensorData::vector(&[
            (task_kind == "emotions") as i64 as f64,
            (positive_rule == "ge") as i64 as f64,
            exclude_neutral as i64 as f64,
            threshold,
        ]),
    )?;
    c.save(path)
}

#[derive(Debug, Clone)]
pub struct SavedClassifier {
    pub tasks: Vec<TaskModel>,
    pub task_kind: String,
    pub positive_rule: String,
    pub exclude_neutral: bool,
    pub threshold: f64,
}

pub fn load_classifier(path: &Path) -> Result<SavedClassifier> {
    let c = Container::load(path)?;
    let mut tasks = Vec::new();
    for name in c.names() {
        if let Some(rest) = name.strip_prefix("task/") {
            if let Some(task) = rest.strip_suffix("/w") {
                let w = c.require(name)?.to_f64();
                let b = c.require(&format!("task/{task}/b"))?.to_f64()[0];
                tasks.push(TaskModel {
                    name: task.to_string(),
                    weights: w,
                    bias: b,
                    report: ConvergenceReport {
                        converged: true,
                        iterations: 0,
                        final_loss: 0.0,
                        final_grad_norm: 0.0,
                        loss_trace: Vec::new(),
                    },
                });
            }
        }
    }
    if tasks.is_empty() {
        return Err(CliError::Data("classifier container has no tasks".into()));
    }
    let meta = c.require("meta/label")?.to_f64();
    Ok(SavedClassifier {
        tasks,
        task_kind: if meta[0] != 0.0 { "emotions" } else { "sentiment" }.into(),
        positive_rule: if meta[1] != 0.0 { "ge" } else { "gt" }.into(),
        exclude_neutral: meta[2] != 0.0,
        threshold: meta[3],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mlr_core::cae::{stack_batch, train_cae, TrainConfig};
    use mlr_core::init::normal_init;

    fn trained_tiny_model() -> (CAEModel, NormalizationStats) {
        let arch = CAEArchitecture::reference(false);
        let model = build_cae((16, 16), &arch, 5, 0.05).unwrap();
        let items: Vec<Tensor> = (0..4)
            .map(|i| normal_init(&[16, 16], 40 + i, 1.0).map(|v| 0.5 + 0.3 * v.tanh()))
            .collect();
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 1,
            early_stop_patience: 1,
            seed: 1,
            ..TrainConfig::default()
        };
        let model = train_cae(model, &items, &items, &cfg).unwrap();
        let mut scalers = NormalizationStats {
            mean: vec![0.0; 16],
            std: vec![1.0; 16],
            post_min: vec![-1.0; 16],
            post_max: vec![1.0; 16],
            degenerate: vec![false; 16],
            fitted_on: "train:unit".into(),
        };
        quantize_scalers(&mut scalers);
        (model, scalers)
    }

    #[test]
    fn model_round_trip_preserves_encoding_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mlrw");
        let (model, scalers) = trained_tiny_model();
        save_model(&path, &model, &scalers, &Modality::ALL, (8, 4, 4), 64, false).unwrap();
        let loaded = load_model(&path).unwrap();
        let batch = stack_batch(&[normal_init(&[16, 16], 99, 1.0).map(|v| 0.5 + 0.3 * v.tanh())])
            .unwrap();
        let before = model.encode(&batch).unwrap();
        let after = loaded.model.encode(&batch).unwrap();
        assert_eq!(before, after, "encode must be bitwise stable across save/load");
        assert_eq!(loaded.scalers, scalers);
        assert_eq!(loaded.dataset_widths, (8, 4, 4));
        assert!(!loaded.encoder_only);
    }

    #[test]
    fn encoder_only_file_still_encodes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.mlrw");
        let (model, scalers) = trained_tiny_model();
        save_model(&path, &model, &scalers, &Modality::ALL, (8, 4, 4), 64, true).unwrap();
        let loaded = load_model(&path).unwrap();
        assert!(loaded.encoder_only);
        let batch = stack_batch(&[normal_init(&[16, 16], 7, 1.0).map(|v| 0.5 + 0.3 * v.tanh())])
            .unwrap();
        assert_eq!(
            loaded.model.encode(&batch).unwrap(),
            model.encode(&batch).unwrap()
        );
    }

    #[test]
    fn embeddings_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.mlrw");
        let emb = Tensor::new(vec![3, 4], (0..12).map(|v| v as f64).collect()).unwrap();
        let records: Vec<UtteranceRecord> = (0..3)
            .map(|i| {
                UtteranceRecord::new(
                    Tensor::zeros(&[2, 3]),
                    (3, 0, 0),
                    Labels {
                        sentiment: Some(i as f64 - 1.0),
                        emotions: Some([i == 0, i == 1, i == 2, false]),
                    },
                    format!("r{i}"),
                    "unit".into(),
                )
                .unwrap()
            })
            .collect();
        save_embeddings(&path, &emb, &records, "unit", "test").unwrap();
        let back = load_embeddings(&path).unwrap();
        assert_eq!(back.embeddings, emb);
        assert_eq!(back.labels[1].sentiment, Some(0.0));
        assert_eq!(back.labels[2].emotions, Some([false, false, true, false]));
        assert_eq!(back.dataset, "unit");
        assert!(path.with_extension("manifest").exists());
    }

    #[test]
    fn classifier_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.mlrw");
        let task = TaskModel {
            name: "sentiment".into(),
            weights: vec![0.25, -0.5],
            bias: 0.125,
            report: ConvergenceReport {
                converged: true,
                iterations: 3,
                final_loss: 0.1,
                final_grad_norm: 1e-7,
                loss_trace: vec![],
            },
        };
        save_classifier(&path, &[task], "sentiment", "gt", false, 0.5).unwrap();
        let back = load_classifier(&path).unwrap();
        assert_eq!(back.tasks.len(), 1);
        assert_eq!(back.tasks[0].weights, vec![0.25, -0.5]);
        assert_eq!(back.tasks[0].bias, 0.125);
        assert_eq!(back.task_kind, "sentiment");
        assert_eq!(back.threshold, 0.5);
    }
}
