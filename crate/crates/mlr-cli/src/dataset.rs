//! MLRD v1: the portable dataset format.
//!
//! A split is a UTF-8 `key = value` manifest plus a binary blob. The blob
//! holds 32-bit little-endian floats laid out `[utterance][timestep][feature]`
//! followed by a label section per the declared schema: for each utterance,
//! `sentiment` contributes one f32 and `emotions4` contributes four 0/1
//! bytes. The manifest records the 64-bit FNV-1a checksum of the whole blob.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use mlr_core::pipeline::{Labels, UtteranceRecord};
use mlr_core::Tensor;

use crate::error::{CliError, Result};
use crate::fnv::fnv1a64;

pub const FORMAT: &str = "MLRD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSchema {
    None,
    Sentiment,
    Emotions4,
    SentimentEmotions4,
}

impl LabelSchema {
    fn as_str(&self) -> &'static str {
        match self {
            LabelSchema::None => "none",
            LabelSchema::Sentiment => "sentiment",
            LabelSchema::Emotions4 => "emotions4",
            LabelSchema::SentimentEmotions4 => "sentiment+emotions4",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LabelSchema::None),
            "sentiment" => Ok(LabelSchema::Sentiment),
            "emotions4" => Ok(LabelSchema::Emotions4),
            "sentiment+emotions4" => Ok(LabelSchema::SentimentEmotions4),
            other => Err(CliError::Data(format!("unknown label schema '{other}'"))),
        }
    }

    fn has_sentiment(&self) -> bool {
        matches!(self, LabelSchema::Sentiment | LabelSchema::SentimentEmotions4)
    }

    fn has_emotions(&self) -> bool {
        matches!(self, LabelSchema::Emotions4 | LabelSchema::SentimentEmotions4)
    }

    fn bytes_per_utterance(&self) -> usize {
        (if self.has_sentiment() { 4 } else { 0 }) + (if self.has_emotions() { 4 } else { 0 })
    }
}

impl fmt::Display for LabelSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parsed split manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset: String,
    pub split: String,
    pub count: usize,
    pub timesteps: usize,
    pub block_names: Vec<String>,
    pub block_widths: Vec<usize>,
    pub label_schema: LabelSchema,
    pub blob: String,
    pub checksum: u64,
}

impl DatasetManifest {
    pub fn feature_width(&self) -> usize {
        self.block_widths.iter().sum()
    }

    fn to_text(&self) -> String {
        let widths: Vec<String> = self.block_widths.iter().map(|w| w.to_string()).collect();
        format!(
            "format = {FORMAT}\nversion = {VERSION}\ndataset = {}\nsplit = {}\ncount = {}\n\
             timesteps = {}\nblock_names = {}\nblock_widths = {}\nlabel_schema = {}\n\
             blob = {}\nchecksum_fnv1a64 = {:016x}\n",
            self.dataset,
            self.split,
            self.count,
            self.timesteps,
            self.block_names.join(","),
            widths.join(","),
            self.label_schema,
            self.blob,
            self.checksum
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Data(format!("manifest line {}: expected 'key = value'", ln + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let take = |key: &str| -> Result<String> {
            map.get(key)
                .cloned()
                .ok_or_else(|| CliError::Data(format!("manifest is missing key '{key}'")))
        };
        let known = [
            "format",
            "version",
            "dataset",
            "split",
            "count",
            "timesteps",
            "block_names",
            "block_widths",
            "label_schema",
            "blob",
            "checksum_fnv1a64",
        ];
        for k in map.keys() {
            if !known.contains(&k.as_str()) {
                return Err(CliError::Data(format!("manifest has unknown key '{k}'")));
            }
        }
        if take("format")? != FORMAT {
            return Err(CliError::Data("manifest format is not MLRD".into()));
        }
        let version: u32 = take("version")?
            .parse()
            .map_err(|_| CliError::Data("bad version".into()))?;
        if version != VERSION {
            return Err(CliError::Data(format!("unsupported MLRD version {version}")));
        }
        let parse_usize = |key: &str| -> Result<usize> {
            take(key)?
                .parse()
                .map_err(|_| CliError::Data(format!("manifest key '{key}' is not an integer")))
        };
        let block_names: Vec<String> = take("block_names")?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let block_widths: Vec<usize> = take("block_widths")?
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| CliError::Data("bad block width".into()))
            })
            .collect::<Result<_>>()?;
        if block_names.len() != block_widths.len() {
            return Err(CliError::Data(format!(
                "{} block names vs {} widths",
                block_names.len(),
                block_widths.len()
            )));
        }
        let checksum = u64::from_str_radix(&take("checksum_fnv1a64")?, 16)
            .map_err(|_| CliError::Data("bad checksum field".into()))?;
        Ok(DatasetManifest {
            dataset: take("dataset")?,
            split: take("split")?,
            count: parse_usize("count")?,
            timesteps: parse_usize("timesteps")?,
            block_names,
            block_widths,
            label_schema: LabelSchema::parse(&take("label_schema")?)?,
            blob: take("blob")?,
            checksum,
        })
    }
}

fn schema_of(records: &[UtteranceRecord]) -> Result<LabelSchema> {
    let first = &records[0].labels;
    let schema = match (first.sentiment.is_some(), first.emotions.is_some()) {
        (true, true) => LabelSchema::SentimentEmotions4,
        (true, false) => LabelSchema::Sentiment,
        (false, true) => LabelSchema::Emotions4,
        (false, false) => LabelSchema::None,
    };
    for r in records {
        if r.labels.sentiment.is_some() != schema.has_sentiment()
            || r.labels.emotions.is_some() != schema.has_emotions()
        {
            return Err(CliError::Data(format!(
                "utterance '{}' breaks the uniform label schema {schema}",
                r.id
            )));
        }
    }
    Ok(schema)
}

/// Writes `<split>.mlrd` + `<split>.bin` into `dir`.
pub fn save_split(dir: &Path, dataset: &str, split: &str, records: &[UtteranceRecord]) -> Result<PathBuf> {
    if records.is_empty() {
        // an empty split is a valid dataset: manifest with count 0, empty blob
        fs::create_dir_all(dir)?;
        let manifest = DatasetManifest {
            dataset: dataset.to_string(),
            split: split.to_string(),
            count: 0,
            timesteps: 0,
            block_names: vec!["audio".into(), "vision".into(), "text".into()],
            block_widths: vec![0, 0, 0],
            label_schema: LabelSchema::None,
            blob: format!("{split}.bin"),
            checksum: fnv1a64(&[]),
        };
        fs::write(dir.join(format!("{split}.bin")), [])?;
        let path = dir.join(format!("{split}.mlrd"));
        fs::write(&path, manifest.to_text())?;
        return Ok(path);
    }

    let timesteps = records[0].timesteps();
    let widths = records[0].block_widths;
    let m = records[0].feature_width();
    for r in records {
        if r.timesteps() != timesteps || r.block_widths != widths {
            return Err(CliError::Data(format!(
                "utterance '{}' has inconsistent dims for this split",
                r.id
            )));
        }
    }
    let schema = schema_of(records)?;

    let mut blob = Vec::with_capacity(records.len() * timesteps * m * 4);
    for r in records {
        for &v in r.x.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for r in records {
        if schema.has_sentiment() {
            blob.extend_from_slice(&(r.labels.sentiment.unwrap() as f32).to_le_bytes());
        }
        if schema.has_emotions() {
            for flag in r.labels.emotions.unwrap() {
                blob.push(flag as u8);
            }
        }
    }

    let manifest = DatasetManifest {
        dataset: dataset.to_string(),
        split: split.to_string(),
        count: records.len(),
        timesteps,
        block_names: vec!["audio".into(), "vision".into(), "text".into()],
        block_widths: vec![widths.0, widths.1, widths.2],
        label_schema: schema,
        blob: format!("{split}.bin"),
        checksum: fnv1a64(&blob),
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{split}.bin")), &blob)?;
    let path = dir.join(format!("{split}.mlrd"));
    fs::write(&path, manifest.to_text())?;
    Ok(path)
}

/// Loads one split from its manifest path, verifying the blob checksum and
/// every declared dimension. `limit = 0` means no cap.
pub fn load_dataset(manifest_path: &Path, limit: usize) -> Result<Vec<UtteranceRecord>> {
    let text = fs::read_to_string(manifest_path).map_err(|e| {
        CliError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", manifest_path.display()),
        ))
    })?;
    let manifest = DatasetManifest::parse(&text)?;
    let blob_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| {
        CliError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", blob_path.display()),
        ))
    })?;
    let actual = fnv1a64(&blob);
    if actual != manifest.checksum {
        return Err(CliError::Data(format!(
            "{}: blob checksum mismatch (manifest {:016x}, blob {actual:016x})",
            blob_path.display(),
            manifest.checksum
        )));
    }
    if manifest.count == 0 {
        return Ok(Vec::new());
    }
    let m = manifest.feature_width();
    let float_bytes = manifest.count * manifest.timesteps * m * 4;
    let label_bytes = manifest.count * manifest.label_schema.bytes_per_utterance();
    if blob.len() != float_bytes + label_bytes {
        return Err(CliError::Data(format!(
            "{}: blob has {} bytes, manifest implies {}",
            blob_path.display(),
            blob.len(),
            float_bytes + label_bytes
        )));
    }
    if manifest.block_widths.len() != 3 {
        return Err(CliError::Data(format!(
            "expected 3 modality blocks, manifest has {}",
            manifest.block_widths.len()
        )));
    }

    let take_n = if limit == 0 {
        manifest.count
    } else {
        manifest.count.min(limit)
    };
    let widths = (
        manifest.block_widths[0],
        manifest.block_widths[1],
        manifest.block_widths[2],
    );
    let mut records = Vec::with_capacity(take_n);
    let per_utt = manifest.timesteps * m;
    let labels_base = float_bytes;
    let lbl_stride = manifest.label_schema.bytes_per_utterance();
    for i in 0..take_n {
        let start = i * per_utt * 4;
        let data: Vec<f64> = blob[start..start + per_utt * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let x = Tensor::new(vec![manifest.timesteps, m], data)
            .map_err(CliError::from)?;
        let mut labels = Labels::default();
        let mut off = labels_base + i * lbl_stride;
        if manifest.label_schema.has_sentiment() {
            let v = f32::from_le_bytes(blob[off..off + 4].try_into().unwrap());
            labels.sentiment = Some(v as f64);
            off += 4;
        }
        if manifest.label_schema.has_emotions() {
            let mut e = [false; 4];
            for (j, flag) in e.iter_mut().enumerate() {
                *flag = blob[off + j] != 0;
            }
            labels.emotions = Some(e);
        }
        records.push(
            UtteranceRecord::new(
                x,
                widths,
                labels,
                format!("{}/{}/{i:05}", manifest.dataset, manifest.split),
                manifest.dataset.clone(),
            )
            .map_err(CliError::from)?,
        );
    }
    Ok(records)
}

/// Convenience: load `<dir>/<split>.mlrd`.
pub fn load_split(dir: &Path, split: &str, limit: usize) -> Result<Vec<UtteranceRecord>> {
    load_dataset(&dir.join(format!("{split}.mlrd")), limit)
}
