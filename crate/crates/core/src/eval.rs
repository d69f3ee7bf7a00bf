//! Latent-space evaluation: 1-NN accuracy, class centers, the MFCC-DTW
//! deviation and a deterministic 2-D projection for plotting.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, DatasetSplit, LabeledClip};
use crate::error::{Error, Result};
use crate::features::{dtw, MfccConfig, MfccExtractor, MfccSequence};
use crate::nn::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEntry {
    pub source_id: String,
    pub label: usize,
    pub mu: Vec<f64>,
}

/// Posterior means of a set of labeled clips, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDataset {
    entries: Vec<LatentEntry>,
    latent_dim: usize,
    num_classes: usize,
}

impl LatentDataset {
    pub fn new(entries: Vec<LatentEntry>, latent_dim: usize, num_classes: usize) -> Result<Self> {
        for e in &entries {
            if e.mu.len() != latent_dim {
                return Err(Error::Shape(format!(
                    "{} has a {}-dimensional latent, expected {latent_dim}",
                    e.source_id,
                    e.mu.len()
                )));
            }
            if e.mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("latent of {}", e.source_id)));
            }
            if e.label >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "{} has label {} but there are {num_classes} classes",
                    e.source_id, e.label
                )));
            }
        }
        Ok(Self {
            entries,
            latent_dim,
            num_classes,
        })
    }

    pub fn entries(&self) -> &[LatentEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn members(&self, class: usize) -> impl Iterator<Item = &LatentEntry> {
        self.entries.iter().filter(move |e| e.label == class)
    }

    /// `source_id,label,z0,...` with one row per entry.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["source_id".to_string(), "label".to_string()];
        header.extend((0..self.latent_dim).map(|i| format!("z{i}")));
        w.write_record(&header)?;
        for e in &self.entries {
            let mut row = vec![e.source_id.clone(), e.label.to_string()];
            row.extend(e.mu.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Encodes every clip with zero noise and keeps the means.
pub fn project_dataset(params: &ModelParams, clips: &[LabeledClip], num_classes: usize) -> Result<LatentDataset> {
    let entries: Vec<Result<LatentEntry>> = clips
        .par_iter()
        .map(|c| {
            let code = params.encode_clip(&c.clip)?;
            Ok(LatentEntry {
                source_id: c.source_id.clone(),
                label: c.label,
                mu: code.mu,
            })
        })
        .collect();
    LatentDataset::new(
        entries.into_iter().collect::<Result<_>>()?,
        params.latent_dim(),
        num_classes,
    )
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Label of the nearest reference entry for every query; ties go to the
/// lowest reference index.
pub fn knn1_predictions(reference: &LatentDataset, queries: &LatentDataset) -> Result<Vec<usize>> {
    if reference.is_empty() || queries.is_empty() {
        return Err(Error::InvalidArgument("1-NN needs non-empty reference and query sets".into()));
    }
    if reference.latent_dim != queries.latent_dim {
        return Err(Error::Shape(format!(
            "reference latents have {} dimensions, queries {}",
            reference.latent_dim, queries.latent_dim
        )));
    }
    Ok(queries
        .entries
        .iter()
        .map(|q| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, r) in reference.entries.iter().enumerate() {
                let d = sq_dist(&q.mu, &r.mu);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            reference.entries[best].label
        })
        .collect())
}

/// Fraction of queries whose nearest reference shares their label.
pub fn knn1_accuracy(reference: &LatentDataset, queries: &LatentDataset) -> Result<f64> {
    let predictions = knn1_predictions(reference, queries)?;
    let correct = predictions
        .iter()
        .zip(&queries.entries)
        .filter(|(p, q)| **p == q.label)
        .count();
    Ok(correct as f64 / queries.len() as f64)
}

/// 1-NN accuracy of a set against itself with each query's own entry left
/// out of the reference. Ties go to the lowest other index.
pub fn knn1_leave_one_out_accuracy(latent: &LatentDataset) -> Result<f64> {
    if latent.len() < 2 {
        return Err(Error::InvalidArgument("leave-one-out 1-NN needs at least 2 entries".into()));
    }
    let correct = latent
        .entries
        .iter()
        .enumerate()
        .filter(|(q, query)| {
            let mut best = (usize::MAX, f64::INFINITY);
            for (i, r) in latent.entries.iter().enumerate() {
                if i == *q {
                    continue;
                }
                let d = sq_dist(&query.mu, &r.mu);
                if best.0 == usize::MAX || d < best.1 {
                    best = (i, d);
                }
            }
            latent.entries[best.0].label == query.label
        })
        .count();
    Ok(correct as f64 / latent.len() as f64)
}

/// Mean latent of one class.
pub fn class_center(latent: &LatentDataset, class: usize) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; latent.latent_dim];
    let mut count = 0usize;
    for e in latent.members(class) {
        for (s, v) in sum.iter_mut().zip(&e.mu) {
            *s += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Degenerate(format!("class {class} has no members")));
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

/// Population (divide-by-n) standard deviation.
pub fn population_std(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "standard deviation needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok((values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `(dtw_mu - mean(D)) / std(D)` for precomputed DTW distances.
pub fn deviation_from_dtw(dtw_mu: f64, intra_class: &[f64]) -> Result<f64> {
    let sd = population_std(intra_class)?;
    if sd == 0.0 {
        return Err(Error::Degenerate(
            "intra-class DTW distances have zero spread".into(),
        ));
    }
    Ok((dtw_mu - mean(intra_class)) / sd)
}

/// MFCC-DTW deviation of one clip: how its distance to the decoded class
/// center compares with its distances to the other members of its class.
/// `class_clips` must not contain `clip` itself.
pub fn mfcc_dtw_deviation(
    clip: &AudioClip,
    class_clips: &[AudioClip],
    decoded_center: &AudioClip,
    cfg: &MfccConfig,
) -> Result<f64> {
    let extractor = MfccExtractor::new(cfg, clip.sample_rate())?;
    let own = extractor.extract(clip)?;
    let dtw_mu = dtw(&own, &extractor.extract(decoded_center)?)?;
    let distances = class_clips
        .iter()
        .map(|c| dtw(&own, &extractor.extract(c)?))
        .collect::<Result<Vec<_>>>()?;
    deviation_from_dtw(dtw_mu, &distances)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDeviation {
    pub class: usize,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

/// Per-class mean and spread of the deviation, with class-averaged totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub classes: Vec<ClassDeviation>,
    /// Mean over classes of the per-class means.
    pub overall_mean: f64,
    /// Mean over classes of the per-class standard deviations.
    pub overall_std: f64,
    /// Every per-instance value, grouped by class.
    pub values: Vec<Vec<f64>>,
}

/// Deviation report from clips grouped by class and one decoded center per class.
pub fn deviation_report_from_clips(
    clips_by_class: &[Vec<AudioClip>],
    centers: &[AudioClip],
    cfg: &MfccConfig,
) -> Result<DeviationReport> {
    if clips_by_class.len() != centers.len() || clips_by_class.is_empty() {
        return Err(Error::Shape(format!(
            "{} classes but {} centers",
            clips_by_class.len(),
            centers.len()
        )));
    }
    let sample_rate = centers[0].sample_rate();
    let extractor = MfccExtractor::new(cfg, sample_rate)?;
    let extract = |c: &AudioClip| -> Result<MfccSequence> {
        if c.sample_rate() != sample_rate {
            return Err(Error::InvalidArgument(format!(
                "mixed sample rates {} and {sample_rate}",
                c.sample_rate()
            )));
        }
        extractor.extract(c)
    };

    let per_class: Vec<Result<Vec<f64>>> = clips_by_class
        .par_iter()
        .zip(centers.par_iter())
        .enumerate()
        .map(|(class, (clips, center))| {
            if clips.len() < 3 {
                return Err(Error::Degenerate(format!(
                    "class {class} has {} clips; the deviation needs at least 3",
                    clips.len()
                )));
            }
            let feats = clips.iter().map(extract).collect::<Result<Vec<_>>>()?;
            let center = extract(center)?;
            let n = feats.len();
            let mut pair = vec![vec![0.0; n]; n];
            for a in 0..n {
                for b in a + 1..n {
                    let d = dtw(&feats[a], &feats[b])?;
                    pair[a][b] = d;
                    pair[b][a] = d;
                }
            }
            (0..n)
                .map(|j| {
                    let others: Vec<f64> = (0..n).filter(|&k| k != j).map(|k| pair[j][k]).collect();
                    deviation_from_dtw(dtw(&feats[j], &center)?, &others)
                        .map_err(|e| match e {
                            Error::Degenerate(_) => Error::Degenerate(format!(
                                "class {class}: instance {j} is equidistant from all other members"
                            )),
                            other => other,
                        })
                })
                .collect()
        })
        .collect();

    let mut classes = Vec::with_capacity(per_class.len());
    let mut values = Vec::with_capacity(per_class.len());
    for (class, devs) in per_class.into_iter().enumerate() {
        let devs = devs?;
        classes.push(ClassDeviation {
            class,
            count: devs.len(),
            mean: mean(&devs),
            std: population_std(&devs)?,
        });
        values.push(devs);
    }
    let k = classes.len() as f64;
    Ok(DeviationReport {
        overall_mean: classes.iter().map(|c| c.mean).sum::<f64>() / k,
        overall_std: classes.iter().map(|c| c.std).sum::<f64>() / k,
        classes,
        values,
    })
}

/// Decodes every class center of the evaluation clips and scores each clip
/// against it.
pub fn deviation_report(params: &ModelParams, split: &DatasetSplit, cfg: &MfccConfig) -> Result<DeviationReport> {
    let clips = split.evaluation_part();
    if clips.is_empty() {
        return Err(Error::InvalidArgument("no clips to evaluate".into()));
    }
    let latent = project_dataset(params, clips, split.num_classes)?;
    deviation_report_with_latent(params, split, &latent, cfg)
}

/// Same as [`deviation_report`] with the evaluation latents already computed.
pub fn deviation_report_with_latent(
    params: &ModelParams,
    split: &DatasetSplit,
    latent: &LatentDataset,
    cfg: &MfccConfig,
) -> Result<DeviationReport> {
    let clips = split.evaluation_part();
    if latent.len() != clips.len() {
        return Err(Error::Shape(format!(
            "{} latents for {} evaluation clips",
            latent.len(),
            clips.len()
        )));
    }
    let mut by_class = vec![Vec::new(); split.num_classes];
    for c in clips {
        by_class[c.label].push(c.clip.clone());
    }
    let centers = (0..split.num_classes)
        .map(|class| params.decode_one(&class_center(latent, class)?))
        .collect::<Result<Vec<_>>>()?;
    deviation_report_from_clips(&by_class, &centers, cfg)
}

/// Run details written next to evaluation tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub arch: String,
    pub seed: u64,
    pub epochs: usize,
}

fn write_metadata(out: &mut impl Write, meta: &RunMetadata) -> std::io::Result<()> {
    writeln!(
        out,
        "# arch={} seed={} epochs={} std=population",
        meta.arch, meta.seed, meta.epochs
    )
}

/// `class,count,mean,std` per class plus an `average` row.
pub fn write_deviation_csv(path: &Path, report: &DeviationReport, meta: &RunMetadata) -> Result<()> {
    let mut buf = Vec::new();
    write_metadata(&mut buf, meta).map_err(|e| Error::io(path, e))?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["class", "count", "mean", "std"])?;
        for c in &report.classes {
            w.write_record([
                c.class.to_string(),
                c.count.to_string(),
                c.mean.to_string(),
                c.std.to_string(),
            ])?;
        }
        let total: usize = report.classes.iter().map(|c| c.count).sum();
        w.write_record([
            "average".to_string(),
            total.to_string(),
            report.overall_mean.to_string(),
            report.overall_std.to_string(),
        ])?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// `metric,value` table with the 1-NN accuracy and set sizes.
pub fn write_knn_csv(path: &Path, accuracy: f64, reference: usize, queries: usize, meta: &RunMetadata) -> Result<()> {
    let mut buf = Vec::new();
    write_metadata(&mut buf, meta).map_err(|e| Error::io(path, e))?;
    writeln!(buf, "metric,value\nknn1_accuracy,{accuracy}\nreference_count,{reference}\nquery_count,{queries}")
        .map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub source_id: String,
    pub label: usize,
    pub x: f64,
    pub y: f64,
}

/// Top-two principal-component view of a latent dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionExport {
    pub points: Vec<ProjectedPoint>,
    /// Two orthonormal rows of length `latent_dim`.
    pub basis: [Vec<f64>; 2],
    pub mean: Vec<f64>,
    /// Share of the total variance along each basis row.
    pub explained_variance: [f64; 2],
    /// True when the data has fewer than two directions of variance; the
    /// missing coordinates are then zero.
    pub rank_deficient: bool,
}

pub fn export_projection_2d(latent: &LatentDataset) -> Result<ProjectionExport> {
    let n = latent.len();
    let d = latent.latent_dim;
    if n < 2 {
        return Err(Error::InvalidArgument("projection needs at least 2 entries".into()));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("projection of zero-dimensional latents".into()));
    }
    let mut centroid = vec![0.0; d];
    for e in &latent.entries {
        for (m, v) in centroid.iter_mut().zip(&e.mu) {
            *m += v / n as f64;
        }
    }
    let centred = DMatrix::from_fn(n, d, |i, j| latent.entries[i].mu[j] - centroid[j]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = 1e-12 * top.max(f64::MIN_POSITIVE);

    let mut basis: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0; 2];
    let mut active = [false; 2];
    for (k, row) in basis.iter_mut().enumerate() {
        if let Some(&idx) = order.get(k) {
            let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            let pivot = v
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |(bi, bv), (i, x)| if x.abs() > bv.abs() { (i, *x) } else { (bi, bv) })
                .1;
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            *row = v;
            let lambda = eig.eigenvalues[idx].max(0.0);
            active[k] = lambda > tol && total > 0.0;
            explained[k] = if total > 0.0 { lambda / total } else { 0.0 };
        } else {
            // one-dimensional latent space: the second axis is all zeros
            explained[k] = 0.0;
        }
    }

    let points = latent
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let coord = |k: usize| -> f64 {
                if active[k] {
                    centred.row(i).iter().zip(&basis[k]).map(|(a, b)| a * b).sum()
                } else {
                    0.0
                }
            };
            ProjectedPoint {
                source_id: e.source_id.clone(),
                label: e.label,
                x: coord(0),
                y: coord(1),
            }
        })
        .collect();
    Ok(ProjectionExport {
        points,
        basis,
        mean: centroid,
        explained_variance: explained,
        rank_deficient: !(active[0] && active[1]),
    })
}

/// `source_id,label,x,y` per point.
pub fn write_projection_csv(path: &Path, export: &ProjectionExport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in &export.points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
