//! Fixed-length mono clips, WAV I/O and dataset assembly.
//!
//! Clips are peak-normalized and then truncated or zero-padded at the end to
//! the dataset's fixed length. The digit corpus is split per class with a
//! seeded shuffle; the drum corpus has no held-out part.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{Cursor, Read, Seek};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, ClusterModel};

/// Fixed length of a spoken-digit clip, in samples.
pub const DIGIT_LENGTH: usize = 4096;
/// Sample rate of the spoken-digit corpus.
pub const DIGIT_SAMPLE_RATE: u32 = 8000;
/// Fixed length of a drum clip, in samples.
pub const DRUM_LENGTH: usize = 16384;
/// Number of k-means clusters used as drum classes.
pub const DRUM_CLASSES: usize = 5;

const PCM16_FULL_SCALE: f64 = 32768.0;

/// A mono waveform with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    /// Builds a clip, rejecting non-finite or out-of-range samples.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("audio sample {v}")));
        }
        if let Some(v) = samples.iter().find(|v| v.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "audio sample {v} outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a clip after clamping every value into `[-1, 1]`.
    pub fn clamped(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("audio sample {v}")));
        }
        Ok(Self {
            samples: samples.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Duration in milliseconds.
    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / self.sample_rate as f64
    }

    /// Scales the clip so that its largest absolute sample is 1. Silent clips
    /// are returned unchanged.
    pub fn peak_normalized(&self) -> Self {
        let peak = self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return self.clone();
        }
        Self {
            samples: self
                .samples
                .iter()
                .map(|v| (v / peak).clamp(-1.0, 1.0))
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Concatenates clips with `gap` samples of silence between consecutive ones.
    pub fn concat_with_gap(clips: &[AudioClip], gap: usize) -> Result<Self> {
        let first = clips
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let rate = first.sample_rate;
        if clips.iter().any(|c| c.sample_rate != rate) {
            return Err(Error::InvalidArgument(
                "cannot concatenate clips with different sample rates".into(),
            ));
        }
        let total = clips.iter().map(AudioClip::len).sum::<usize>() + gap * (clips.len() - 1);
        let mut samples = Vec::with_capacity(total);
        for (i, clip) in clips.iter().enumerate() {
            if i > 0 {
                samples.extend(std::iter::repeat(0.0).take(gap));
            }
            samples.extend_from_slice(&clip.samples);
        }
        Ok(Self {
            samples,
            sample_rate: rate,
        })
    }
}

/// Truncates from the end or zero-pads at the end so the clip has exactly
/// `target_len` samples.
pub fn fit_length(clip: &AudioClip, target_len: usize) -> AudioClip {
    let mut samples = clip.samples.clone();
    samples.resize(target_len, 0.0);
    AudioClip {
        samples,
        sample_rate: clip.sample_rate,
    }
}

/// A clip with its class index and the file it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledClip {
    pub clip: AudioClip,
    pub label: usize,
    pub source_id: String,
}

/// Which side of a split a clip belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Test,
}

impl SplitPart {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "test" => Ok(SplitPart::Test),
            other => Err(Error::Dataset(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledClip>,
    pub test: Vec<LabeledClip>,
    pub num_classes: usize,
    pub fixed_length: usize,
    pub sample_rate: u32,
    /// Directory the clips were read from, if any.
    pub source_root: Option<PathBuf>,
}

impl DatasetSplit {
    pub fn part(&self, part: SplitPart) -> &[LabeledClip] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Test => &self.test,
        }
    }

    /// Test clips when there are any, otherwise the training clips.
    pub fn evaluation_part(&self) -> &[LabeledClip] {
        if self.test.is_empty() {
            &self.train
        } else {
            &self.test
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (SplitPart, &LabeledClip)> {
        self.train
            .iter()
            .map(|c| (SplitPart::Train, c))
            .chain(self.test.iter().map(|c| (SplitPart::Test, c)))
    }

    /// Checks lengths, labels and train/test disjointness.
    /// Manifest rows for every clip; paths are joined to `source_root` when known.
    pub fn manifest(&self) -> Manifest {
        let rows = self
            .iter()
            .map(|(part, c)| ManifestRow {
                source_id: c.source_id.clone(),
                split: part,
                label: c.label,
                path: self
                    .source_root
                    .as_ref()
                    .map(|r| r.join(&c.source_id).to_string_lossy().into_owned())
                    .unwrap_or_else(|| c.source_id.clone()),
            })
            .collect();
        Manifest {
            num_classes: self.num_classes,
            fixed_length: self.fixed_length,
            sample_rate: self.sample_rate,
            rows,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (_, c) in self.iter() {
            if c.clip.len() != self.fixed_length {
                return Err(Error::Dataset(format!(
                    "{} has {} samples, expected {}",
                    c.source_id,
                    c.clip.len(),
                    self.fixed_length
                )));
            }
            if c.label >= self.num_classes {
                return Err(Error::Dataset(format!(
                    "{} has label {} but there are {} classes",
                    c.source_id, c.label, self.num_classes
                )));
            }
        }
        let train_ids: HashSet<&str> = self.train.iter().map(|c| c.source_id.as_str()).collect();
        if let Some(c) = self.test.iter().find(|c| train_ids.contains(c.source_id.as_str())) {
            return Err(Error::Dataset(format!(
                "{} appears in both train and test",
                c.source_id
            )));
        }
        Ok(())
    }
}

fn wav_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::WavFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn decode_wav<R: Read>(reader: hound::WavReader<R>, path: &Path) -> Result<AudioClip> {
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_error(
            path,
            format!("expected mono, found {} channels", spec.channels),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(wav_error(path, "only integer PCM is supported"));
    }
    let bits = spec.bits_per_sample;
    if !matches!(bits, 8 | 16 | 24 | 32) {
        return Err(wav_error(path, format!("unsupported bit depth {bits}")));
    }
    let full_scale = (1u64 << (bits - 1)) as f64;
    let samples = reader
        .into_samples::<i32>()
        .map(|s| s.map(|v| v as f64 / full_scale))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e.to_string()))?;
    AudioClip::clamped(samples, spec.sample_rate)
}

/// Reads a mono integer-PCM WAV file, scaling samples by the PCM full-scale value.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => wav_error(path, other.to_string()),
    })?;
    decode_wav(reader, path)
}

/// Decodes WAV bytes held in memory.
pub fn decode_wav_bytes(bytes: &[u8]) -> Result<AudioClip> {
    let path = Path::new("<memory>");
    let reader =
        hound::WavReader::new(Cursor::new(bytes)).map_err(|e| wav_error(path, e.to_string()))?;
    decode_wav(reader, path)
}

fn quantize(v: f64) -> i16 {
    (v.clamp(-1.0, 1.0) * PCM16_FULL_SCALE)
        .round()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

fn write_pcm16<W: std::io::Write + Seek>(clip: &AudioClip, sink: W) -> hound::Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::new(sink, spec)?;
    for &v in &clip.samples {
        writer.write_sample(quantize(v))?;
    }
    writer.finalize()
}

/// Encodes a clip as mono PCM16 WAV bytes.
pub fn encode_wav_bytes(clip: &AudioClip) -> Vec<u8> {
    let mut cursor = Cursor::new(Vec::with_capacity(44 + 2 * clip.len()));
    // Writing into a Vec cannot fail.
    write_pcm16(clip, &mut cursor).expect("in-memory wav encoding");
    cursor.into_inner()
}

/// Writes a mono PCM16 WAV file; values are clamped to `[-1, 1]` first.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav_bytes(clip);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn wav_files(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn file_id(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Parses the digit label from a file name such as `7_jackson_12.wav`.
pub fn digit_label_from_name(name: &str) -> Option<usize> {
    let digits: String = name.chars().take_while(|c| c.is_ascii_digit()).collect();
    match digits.parse::<usize>() {
        Ok(d) if d < 10 && !digits.is_empty() => Some(d),
        _ => None,
    }
}

/// Shape of a labeled corpus and how it is split.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitLayout {
    pub num_classes: usize,
    pub clips_per_class: usize,
    pub test_per_class: usize,
    pub fixed_length: usize,
    pub sample_rate: u32,
}

impl Default for DigitLayout {
    fn default() -> Self {
        Self {
            num_classes: 10,
            clips_per_class: 50,
            test_per_class: 10,
            fixed_length: DIGIT_LENGTH,
            sample_rate: DIGIT_SAMPLE_RATE,
        }
    }
}

/// Loads the spoken-digit corpus and splits it 40/10 per class.
pub fn build_digit_dataset(root: impl AsRef<Path>, seed: u64) -> Result<DatasetSplit> {
    build_digit_dataset_with(root, seed, &DigitLayout::default())
}

pub fn build_digit_dataset_with(
    root: impl AsRef<Path>,
    seed: u64,
    layout: &DigitLayout,
) -> Result<DatasetSplit> {
    let root = root.as_ref();
    let mut by_class: BTreeMap<usize, Vec<PathBuf>> = BTreeMap::new();
    for path in wav_files(root)? {
        let name = file_id(&path);
        let label = digit_label_from_name(&name)
            .filter(|&l| l < layout.num_classes)
            .ok_or_else(|| Error::Dataset(format!("cannot read a digit label from `{name}`")))?;
        by_class.entry(label).or_default().push(path);
    }
    for class in 0..layout.num_classes {
        let found = by_class.get(&class).map_or(0, Vec::len);
        if found != layout.clips_per_class {
            return Err(Error::Dataset(format!(
                "class {class} has {found} recordings, expected {}",
                layout.clips_per_class
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut paths) in by_class {
        paths.shuffle(&mut rng);
        for (i, path) in paths.iter().enumerate() {
            let clip = load_wav(path)?;
            if clip.sample_rate() != layout.sample_rate {
                return Err(Error::Dataset(format!(
                    "{} is sampled at {} Hz, expected {}",
                    path.display(),
                    clip.sample_rate(),
                    layout.sample_rate
                )));
            }
            let item = LabeledClip {
                clip: fit_length(&clip.peak_normalized(), layout.fixed_length),
                label,
                source_id: file_id(path),
            };
            if i < layout.test_per_class {
                test.push(item);
            } else {
                train.push(item);
            }
        }
    }
    let split = DatasetSplit {
        train,
        test,
        num_classes: layout.num_classes,
        fixed_length: layout.fixed_length,
        sample_rate: layout.sample_rate,
        source_root: Some(root.to_path_buf()),
    };
    split.validate()?;
    Ok(split)
}

/// Loads every drum clip of a directory, fitted to the drum length.
pub fn load_drum_clips(root: impl AsRef<Path>) -> Result<Vec<(String, AudioClip)>> {
    let root = root.as_ref();
    let files = wav_files(root)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!(
            "no wav files in {}",
            root.display()
        )));
    }
    let mut clips = Vec::with_capacity(files.len());
    let mut rate = None;
    for path in files {
        let clip = load_wav(&path)?;
        match rate {
            None => rate = Some(clip.sample_rate()),
            Some(r) if r != clip.sample_rate() => {
                return Err(Error::Dataset(format!(
                    "{} is sampled at {} Hz but other clips use {r} Hz",
                    path.display(),
                    clip.sample_rate()
                )))
            }
            Some(_) => {}
        }
        clips.push((
            file_id(&path),
            fit_length(&clip.peak_normalized(), DRUM_LENGTH),
        ));
    }
    Ok(clips)
}

/// Labels every drum clip by its nearest attack-feature centroid. All clips
/// go to the training side.
pub fn build_drum_dataset(root: impl AsRef<Path>, cluster_model: &ClusterModel) -> Result<DatasetSplit> {
    let root = root.as_ref();
    let clips = load_drum_clips(root)?;
    let sample_rate = clips[0].1.sample_rate();
    let mut train = Vec::with_capacity(clips.len());
    for (source_id, clip) in clips {
        let feats = features::drum_attack_features(&clip)?;
        let label = features::assign_cluster(cluster_model, &feats)?;
        train.push(LabeledClip {
            clip,
            label,
            source_id,
        });
    }
    let split = DatasetSplit {
        train,
        test: Vec::new(),
        num_classes: cluster_model.k(),
        fixed_length: DRUM_LENGTH,
        sample_rate,
        source_root: Some(root.to_path_buf()),
    };
    split.validate()?;
    Ok(split)
}

/// One row of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub source_id: String,
    pub split: SplitPart,
    pub label: usize,
    pub path: String,
}

/// Writes `source_id,split,label,path` rows preceded by a metadata comment.
pub fn write_manifest(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    split.manifest().write(path)
}

/// Manifest contents: metadata plus rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub num_classes: usize,
    pub fixed_length: usize,
    pub sample_rate: u32,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!(
            "# num_classes={} fixed_length={} sample_rate={}\n",
            self.num_classes, self.fixed_length, self.sample_rate
        );
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            writer.serialize(row)?;
        }
        let body = writer
            .into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?;
        out.push_str(&String::from_utf8_lossy(&body));
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta_line = text
        .lines()
        .next()
        .filter(|l| l.starts_with('#'))
        .ok_or_else(|| Error::Dataset("manifest lacks its metadata line".into()))?;
    let mut meta = BTreeMap::new();
    for kv in meta_line.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = kv.split_once('=') {
            meta.insert(k.to_string(), v.to_string());
        }
    }
    let field = |k: &str| -> Result<u64> {
        meta.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Dataset(format!("manifest metadata lacks `{k}`")))
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
    Ok(Manifest {
        num_classes: field("num_classes")? as usize,
        fixed_length: field("fixed_length")? as usize,
        sample_rate: field("sample_rate")? as u32,
        rows,
    })
}

/// Rebuilds a split from a manifest, re-reading every clip. Relative paths
/// are resolved against the manifest's directory.
pub fn load_split_from_manifest(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut split = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
        num_classes: manifest.num_classes,
        fixed_length: manifest.fixed_length,
        sample_rate: manifest.sample_rate,
        source_root: None,
    };
    for row in manifest.rows {
        let file = Path::new(&row.path);
        let file = if file.is_absolute() {
            file.to_path_buf()
        } else {
            base.join(file)
        };
        let clip = fit_length(&load_wav(&file)?.peak_normalized(), manifest.fixed_length);
        let item = LabeledClip {
            clip,
            label: row.label,
            source_id: row.source_id,
        };
        match row.split {
            SplitPart::Train => split.train.push(item),
            SplitPart::Test => split.test.push(item),
        }
    }
    split.validate()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_length_truncates_and_pads() {
        let c = AudioClip::new(vec![0.1, 0.2, 0.3, 0.4, 0.5], 8000).unwrap();
        assert_eq!(fit_length(&c, 3).samples(), &[0.1, 0.2, 0.3]);
        let c = AudioClip::new(vec![0.5, -0.5], 8000).unwrap();
        assert_eq!(fit_length(&c, 4).samples(), &[0.5, -0.5, 0.0, 0.0]);
        let c = AudioClip::new((0..4096).map(|i| (i as f64 / 4096.0) - 0.5).collect(), 8000).unwrap();
        assert_eq!(fit_length(&c, 4096), c);
    }

    #[test]
    fn clip_rejects_bad_values() {
        assert!(AudioClip::new(vec![f64::NAN], 8000).is_err());
        assert!(AudioClip::new(vec![1.5], 8000).is_err());
        assert_eq!(AudioClip::clamped(vec![2.0, -3.0], 8000).unwrap().samples(), &[1.0, -1.0]);
    }

    #[test]
    fn peak_normalization() {
        let c = AudioClip::new(vec![0.25, -0.5, 0.1], 8000).unwrap();
        assert_eq!(c.peak_normalized().samples(), &[0.5, -1.0, 0.2]);
        let silent = AudioClip::silence(4, 8000);
        assert_eq!(silent.peak_normalized(), silent);
    }

    #[test]
    fn pcm16_extremes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for v in [0i16, 0, 0, i16::MIN] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.samples(), &[0.0, 0.0, 0.0, -1.0]);
        assert_eq!(clip.sample_rate(), 8000);
    }

    #[test]
    fn save_clamps_to_full_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let clip = AudioClip::clamped(vec![0.0, 2.0, 0.0], 8000).unwrap();
        save_wav(&clip, &path).unwrap();
        let raw: Vec<i16> = hound::WavReader::open(&path)
            .unwrap()
            .into_samples::<i16>()
            .map(|s| s.unwrap())
            .collect();
        assert_eq!(raw, vec![0, i16::MAX, 0]);
        let zeros = AudioClip::silence(5, 8000);
        save_wav(&zeros, &path).unwrap();
        let raw: Vec<i16> = hound::WavReader::open(&path)
            .unwrap()
            .into_samples::<i16>()
            .map(|s| s.unwrap())
            .collect();
        assert_eq!(raw, vec![0; 5]);
    }

    #[test]
    fn load_rejects_stereo_float_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&stereo), Err(Error::WavFormat { .. })));

        let float = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&float, spec).unwrap();
        w.write_sample(0.5f32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&float), Err(Error::WavFormat { .. })));

        assert!(matches!(
            load_wav(dir.path().join("missing.wav")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let clip = AudioClip::silence(3, 8000);
        let err = save_wav(&clip, "/nonexistent-dir/sub/x.wav").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn digit_labels_from_names() {
        assert_eq!(digit_label_from_name("7_jackson_12.wav"), Some(7));
        assert_eq!(digit_label_from_name("0_x.wav"), Some(0));
        assert_eq!(digit_label_from_name("jackson.wav"), None);
        assert_eq!(digit_label_from_name("12_x.wav"), None);
    }

    #[test]
    fn concatenation_inserts_gaps() {
        let a = AudioClip::new(vec![0.5; 3], 100).unwrap();
        let b = AudioClip::new(vec![-0.5; 3], 100).unwrap();
        let c = AudioClip::concat_with_gap(&[a, b], 2).unwrap();
        assert_eq!(c.samples(), &[0.5, 0.5, 0.5, 0.0, 0.0, -0.5, -0.5, -0.5]);
    }
}
