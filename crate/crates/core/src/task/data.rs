use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

use super::{ClientDataset, Example};

/// Shuffled index shards: `n` groups whose sizes differ by at most one,
/// the first `len % n` groups taking the extra element.
pub fn partition_indices(len: usize, n: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 || len < n {
        return Err(Error::TooFewExamples {
            examples: len,
            clients: n,
        });
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let (base, extra) = (len / n, len % n);
    let mut shards = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        shards.push(idx[start..start + size].to_vec());
        start += size;
    }
    Ok(shards)
}

/// Seeded uniform IID split of `examples` into `n` client datasets.
pub fn partition_iid<T: Clone>(examples: &[T], n: usize, seed: u64) -> Result<Vec<ClientDataset<T>>> {
    partition_indices(examples.len(), n, seed)?
        .into_iter()
        .map(|shard| ClientDataset::new(shard.into_iter().map(|i| examples[i].clone()).collect()))
        .collect()
}

/// Splits off a seeded random `fraction` of `examples` as a held-out set.
/// Returns `(train, test)`.
pub fn split_holdout<T: Clone>(examples: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.shuffle(&mut seeded_rng(seed ^ 0x7E57));
    let n_test = ((examples.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let test = idx[..n_test].iter().map(|&i| examples[i].clone()).collect();
    let train = idx[n_test..].iter().map(|&i| examples[i].clone()).collect();
    (train, test)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMetadata {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub count: usize,
    pub class_counts: Vec<usize>,
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let mut dim = None;
    let mut classes = None;
    for part in line.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::parse(1, "header must be `dim=<int>,classes=<int>`"))?;
        let v: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::parse(1, format!("header value {v:?} is not an integer")))?;
        match k.trim() {
            "dim" => dim = Some(v),
            "classes" => classes = Some(v),
            other => return Err(Error::parse(1, format!("unknown header key `{other}`"))),
        }
    }
    match (dim, classes) {
        (Some(d), Some(c)) if d >= 1 && c >= 2 => Ok((d, c)),
        (Some(_), Some(_)) => Err(Error::parse(1, "need dim >= 1 and classes >= 2")),
        _ => Err(Error::parse(1, "header must be `dim=<int>,classes=<int>`")),
    }
}

/// Parses the frozen-feature text format: a `dim=<int>,classes=<int>` header
/// followed by one `label,f1,...,fdim` row per example.
pub fn parse_frozen_features(reader: impl Read) -> Result<(Vec<Example>, FeatureMetadata)> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty feature file"))??;
    let (dim, classes) = parse_header(header.trim())?;
    let mut examples = Vec::new();
    let mut class_counts = vec![0; classes];
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_raw = fields.next().unwrap_or_default().trim();
        let label: usize = label_raw
            .parse()
            .map_err(|_| Error::parse(line_no, format!("label {label_raw:?} is not an integer")))?;
        if label >= classes {
            return Err(Error::parse(
                line_no,
                format!("label {label} out of range for {classes} classes"),
            ));
        }
        let features = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(line_no, format!("feature {f:?} is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if features.len() != dim {
            return Err(Error::parse(
                line_no,
                format!("expected {dim} features, found {}", features.len()),
            ));
        }
        class_counts[label] += 1;
        examples.push(Example { features, label });
    }
    let meta = FeatureMetadata {
        feature_dim: dim,
        num_classes: classes,
        count: examples.len(),
        class_counts,
    };
    Ok((examples, meta))
}

pub fn load_frozen_features(path: impl AsRef<Path>) -> Result<(Vec<Example>, FeatureMetadata)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    parse_frozen_features(file).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Writes examples in the frozen-feature format. Reals use shortest
/// round-trip formatting, so reading the file back is lossless.
pub fn write_frozen_features(
    mut writer: impl Write,
    examples: &[Example],
    feature_dim: usize,
    num_classes: usize,
) -> Result<()> {
    writeln!(writer, "dim={feature_dim},classes={num_classes}")?;
    let mut line = String::new();
    for ex in examples {
        if ex.features.len() != feature_dim {
            return Err(Error::DimensionMismatch {
                expected: feature_dim,
                got: ex.features.len(),
            });
        }
        line.clear();
        line.push_str(&ex.label.to_string());
        for f in &ex.features {
            line.push(',');
            line.push_str(&f.to_string());
        }
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// Synthetic stand-in for frozen-extractor features with a badly
/// conditioned second-moment matrix.
///
/// Coordinate `j` is scaled by `kappa^(-j/(2(f-1)))`, so the feature
/// covariance spans a condition number of about `kappa`. Every feature also
/// carries a shared `offset`, as post-ReLU embeddings do, which adds one
/// dominant curvature direction.
#[derive(Debug, Clone, PartialEq)]
pub struct AnisotropicSpec {
    pub feature_dim: usize,
    pub classes: usize,
    pub examples: usize,
    pub kappa: f64,
    /// Distance between class means in whitened units.
    pub separation: f64,
    pub offset: f64,
    /// Multiplies every feature after the offset is added.
    pub scale: f64,
    pub seed: u64,
}

impl Default for AnisotropicSpec {
    fn default() -> Self {
        AnisotropicSpec {
            feature_dim: 16,
            classes: 4,
            examples: 4000,
            kappa: 100.0,
            separation: 1.0,
            offset: 1.0,
            scale: 1.0,
            seed: 0,
        }
    }
}

pub fn make_anisotropic_features(spec: &AnisotropicSpec) -> Result<Vec<Example>> {
    if spec.feature_dim < 1 || spec.classes < 2 || spec.examples < 1 {
        return Err(Error::Task("need feature_dim >= 1, classes >= 2, examples >= 1".into()));
    }
    if !(spec.kappa >= 1.0) {
        return Err(Error::Task("kappa must be at least 1".into()));
    }
    let f = spec.feature_dim;
    let mut rng = seeded_rng(spec.seed);
    let scales: Vec<f64> = (0..f)
        .map(|j| {
            if f == 1 {
                1.0
            } else {
                spec.kappa.powf(-(j as f64) / (2.0 * (f - 1) as f64))
            }
        })
        .collect();
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            (0..f)
                .map(|_| spec.separation * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let examples = (0..spec.examples)
        .map(|k| {
            let label = k % spec.classes;
            let features = (0..f)
                .map(|j| {
                    let z: f64 = rng.sample(StandardNormal);
                    spec.scale * (spec.offset + scales[j] * (means[label][j] + z))
                })
                .collect();
            Example { features, label }
        })
        .collect();
    Ok(examples)
}
