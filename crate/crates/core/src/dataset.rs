//! Synthetic classification datasets, leveled corruption operators for
//! out-of-distribution test splits, and the delimited dataset file format.
//!
//! File layout (one sample per row, comma separated):
//!
//! ```text
//! # gen_seed=7
//! split,x0,x1,label
//! pool,0.25,-1.5,1
//! test_id,0.5,2,0
//! test_ood:additive-noise:2,0.61,1.93,0
//! ```
//!
//! Lines starting with `#` are comments; `# gen_seed=<n>` is recognised and
//! restored into [`DatasetBundle::gen_seed`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid dataset config: `{field}` {reason}")]
    Config { field: &'static str, reason: String },
    #[error("cannot corrupt an empty sample list")]
    EmptyInput,
    #[error("unknown corruption `{0}` (expected <kind>:<level>)")]
    UnknownCorruption(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: schema error: {reason}")]
    Schema { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn config_err(field: &'static str, reason: impl Into<String>) -> DatasetError {
    DatasetError::Config {
        field,
        reason: reason.into(),
    }
}

/// A labelled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

impl AsRef<[f64]> for Sample {
    fn as_ref(&self) -> &[f64] {
        &self.features
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub train_pool: Vec<Sample>,
    pub test_id: Vec<Sample>,
    /// Keyed by the corruption's display form, e.g. `additive-noise:2`.
    pub test_ood: BTreeMap<String, Vec<Sample>>,
    pub num_classes: usize,
    pub dim: usize,
    pub gen_seed: u64,
}

impl DatasetBundle {
    /// Evaluation splits in a fixed order: `test_id` first, then every OOD
    /// split as `test_ood:<name>` in key order.
    pub fn eval_splits(&self) -> Vec<(String, &[Sample])> {
        let mut out = Vec::with_capacity(1 + self.test_ood.len());
        out.push((TEST_ID.to_string(), self.test_id.as_slice()));
        for (name, samples) in &self.test_ood {
            out.push((format!("{OOD_PREFIX}{name}"), samples.as_slice()));
        }
        out
    }
}

pub const POOL: &str = "pool";
pub const TEST_ID: &str = "test_id";
pub const OOD_PREFIX: &str = "test_ood:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CorruptionKind {
    AdditiveNoise,
    AffineWarp,
    Quantize,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 3] = [Self::AdditiveNoise, Self::AffineWarp, Self::Quantize];

    pub fn name(self) -> &'static str {
        match self {
            Self::AdditiveNoise => "additive-noise",
            Self::AffineWarp => "affine-warp",
            Self::Quantize => "quantize",
        }
    }
}

/// A corruption family at a severity level; level 0 is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub level: u32,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, level: u32) -> Self {
        Self { kind, level }
    }

    /// Number of quantization bins per feature at this level.
    pub fn quantize_bins(&self) -> u32 {
        1u32 << 8u32.saturating_sub(self.level)
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.name(), self.level)
    }
}

impl FromStr for CorruptionSpec {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::UnknownCorruption(s.to_string());
        let (kind, level) = s.rsplit_once(':').ok_or_else(bad)?;
        let kind = CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == kind)
            .ok_or_else(bad)?;
        let level = level.parse().map_err(|_| bad())?;
        Ok(Self { kind, level })
    }
}

impl TryFrom<String> for CorruptionSpec {
    type Error = DatasetError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<CorruptionSpec> for String {
    fn from(c: CorruptionSpec) -> String {
        c.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    GaussianMixture,
    TwoMoonsLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub family: Family,
    pub n_pool: usize,
    pub n_test: usize,
    pub classes: usize,
    pub dim: usize,
    pub class_separation: f64,
    pub seed: u64,
    /// Gaussian sub-clusters per class (gaussian-mixture only).
    #[serde(default = "one")]
    pub clusters_per_class: usize,
    /// Within-cluster standard deviation, or the arc noise scale for two-moons.
    #[serde(default = "unit")]
    pub cluster_std: f64,
    /// Fraction of each class drawn close to the nearest foreign class
    /// (gaussian-mixture only).
    #[serde(default)]
    pub boundary_fraction: f64,
    #[serde(default = "default_corruptions")]
    pub corruptions: Vec<CorruptionSpec>,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

pub fn default_corruptions() -> Vec<CorruptionSpec> {
    CorruptionKind::ALL
        .into_iter()
        .flat_map(|k| [CorruptionSpec::new(k, 2), CorruptionSpec::new(k, 5)])
        .collect()
}

impl DatasetConfig {
    pub fn gaussian(n_pool: usize, n_test: usize, classes: usize, dim: usize, sep: f64, seed: u64) -> Self {
        Self {
            family: Family::GaussianMixture,
            n_pool,
            n_test,
            classes,
            dim,
            class_separation: sep,
            seed,
            clusters_per_class: 1,
            cluster_std: 1.0,
            boundary_fraction: 0.0,
            corruptions: default_corruptions(),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.classes < 2 {
            return Err(config_err("classes", "must be at least 2"));
        }
        if self.dim < 2 {
            return Err(config_err("dim", "must be at least 2"));
        }
        if self.n_pool < self.classes {
            return Err(config_err(
                "n_pool",
                format!("must be at least classes ({})", self.classes),
            ));
        }
        if self.n_test < self.classes {
            return Err(config_err(
                "n_test",
                format!("must be at least classes ({})", self.classes),
            ));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(config_err("class_separation", "must be positive and finite"));
        }
        if self.clusters_per_class < 1 {
            return Err(config_err("clusters_per_class", "must be at least 1"));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(config_err("cluster_std", "must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.boundary_fraction) {
            return Err(config_err("boundary_fraction", "must lie in [0, 1]"));
        }
        if self.family == Family::TwoMoonsLike && self.boundary_fraction > 0.0 {
            return Err(config_err("boundary_fraction", "is only supported by gaussian-mixture"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.corruptions {
            if !seen.insert(*c) {
                return Err(config_err("corruptions", format!("lists `{c}` twice")));
            }
        }
        Ok(())
    }
}

/// Class geometry shared by every split of one generated dataset.
struct ClassModel {
    centers: Vec<Vec<f64>>,
    sub_offsets: Vec<Vec<Vec<f64>>>,
    nearest_foreign: Vec<usize>,
}

impl ClassModel {
    fn new(cfg: &DatasetConfig, rng: &mut ChaCha8Rng) -> Self {
        let (c, d, sep) = (cfg.classes, cfg.dim, cfg.class_separation);
        // Classes sit on signed coordinate axes so neighbouring centres are
        // `sep` apart; extra classes move to outer shells.
        let centers: Vec<Vec<f64>> = (0..c)
            .map(|class| {
                let axis = (class / 2) % d;
                let shell = (class / (2 * d)) as f64;
                let sign = if class % 2 == 0 { 1.0 } else { -1.0 };
                let mut v = vec![0.0; d];
                v[axis] = sign * (1.0 + shell) * sep / std::f64::consts::SQRT_2;
                v
            })
            .collect();
        let sub_offsets = (0..c)
            .map(|_| {
                (0..cfg.clusters_per_class)
                    .map(|_| {
                        if cfg.clusters_per_class == 1 {
                            vec![0.0; d]
                        } else {
                            (0..d).map(|_| gauss(rng) * sep / 4.0).collect()
                        }
                    })
                    .collect()
            })
            .collect();
        let nearest_foreign = (0..c)
            .map(|a| {
                (0..c)
                    .filter(|&b| b != a)
                    .min_by(|&x, &y| sq_dist(&centers[a], &centers[x]).total_cmp(&sq_dist(&centers[a], &centers[y])))
                    .expect("at least two classes")
            })
            .collect();
        Self {
            centers,
            sub_offsets,
            nearest_foreign,
        }
    }

    fn draw(&self, cfg: &DatasetConfig, label: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match cfg.family {
            Family::GaussianMixture => {
                let center = &self.centers[label];
                if cfg.boundary_fraction > 0.0 && rng.random::<f64>() < cfg.boundary_fraction {
                    let other = &self.centers[self.nearest_foreign[label]];
                    let t = rng.random_range(0.35..0.5);
                    let noise = 0.25 * cfg.cluster_std;
                    center
                        .iter()
                        .zip(other)
                        .map(|(a, b)| a + t * (b - a) + noise * gauss(rng))
                        .collect()
                } else {
                    let j = rng.random_range(0..cfg.clusters_per_class);
                    let offset = &self.sub_offsets[label][j];
                    center
                        .iter()
                        .zip(offset)
                        .map(|(m, o)| m + o + cfg.cluster_std * gauss(rng))
                        .collect()
                }
            }
            Family::TwoMoonsLike => {
                let pair = (label / 2) as f64;
                let t = rng.random_range(0.0..std::f64::consts::PI);
                let (x, y) = if label.is_multiple_of(2) {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                let noise = 0.1 * cfg.cluster_std;
                let mut v = Vec::with_capacity(cfg.dim);
                v.push(cfg.class_separation * (x + 3.0 * pair) + noise * gauss(rng));
                v.push(cfg.class_separation * y + noise * gauss(rng));
                for _ in 2..cfg.dim {
                    v.push(noise * gauss(rng));
                }
                v
            }
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn draw_split(cfg: &DatasetConfig, model: &ClassModel, n: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % cfg.classes).collect();
    labels.shuffle(rng);
    labels
        .into_iter()
        .map(|label| Sample::new(model.draw(cfg, label, rng), label))
        .collect()
}

/// Generates a dataset bundle; a pure function of `config`.
pub fn generate(config: &DatasetConfig) -> Result<DatasetBundle, DatasetError> {
    config.validate()?;
    let model = ClassModel::new(config, &mut seed::stream(config.seed, "dataset-model", &[]));
    let train_pool = draw_split(
        config,
        &model,
        config.n_pool,
        &mut seed::stream(config.seed, "dataset-pool", &[]),
    );
    let test_id = draw_split(
        config,
        &model,
        config.n_test,
        &mut seed::stream(config.seed, "dataset-test", &[]),
    );
    let mut test_ood = BTreeMap::new();
    for spec in &config.corruptions {
        let s = seed::derive_seed(config.seed, "dataset-ood", &[spec.kind as u64, u64::from(spec.level)]);
        test_ood.insert(spec.to_string(), corrupt(&test_id, *spec, s)?);
    }
    Ok(DatasetBundle {
        train_pool,
        test_id,
        test_ood,
        num_classes: config.classes,
        dim: config.dim,
        gen_seed: config.seed,
    })
}

/// Applies a corruption to every sample. Labels are never touched and level 0
/// returns the input features unchanged.
///
/// * additive-noise: i.i.d. Gaussian noise with σ = 0.1·level.
/// * affine-warp: `x ↦ (I + 0.05·level·(K + U))·x` with `K` a random
///   skew-symmetric (rotation) generator and `U` a random strictly upper
///   triangular (shear) matrix, both fixed by `seed`.
/// * quantize: each feature rounded to the nearest point of a lattice with
///   `2^(8-level)` bins spanning that feature's range over `samples`.
pub fn corrupt(samples: &[Sample], spec: CorruptionSpec, seed: u64) -> Result<Vec<Sample>, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    if spec.level == 0 {
        return Ok(samples.to_vec());
    }
    let mut rng = seed::stream(seed, "corrupt", &[spec.kind as u64, u64::from(spec.level)]);
    let level = f64::from(spec.level);
    let out = match spec.kind {
        CorruptionKind::AdditiveNoise => {
            let sigma = 0.1 * level;
            samples
                .iter()
                .map(|s| {
                    let f = s.features.iter().map(|x| x + sigma * gauss(&mut rng)).collect();
                    Sample::new(f, s.label)
                })
                .collect()
        }
        CorruptionKind::AffineWarp => {
            let d = samples[0].features.len();
            let warp = warp_matrix(d, 0.05 * level, &mut rng);
            samples
                .iter()
                .map(|s| {
                    let f = warp
                        .iter()
                        .map(|row| row.iter().zip(&s.features).map(|(w, x)| w * x).sum())
                        .collect();
                    Sample::new(f, s.label)
                })
                .collect()
        }
        CorruptionKind::Quantize => {
            let lattice = Lattice::fit(samples, spec.quantize_bins());
            samples
                .iter()
                .map(|s| {
                    let f = s
                        .features
                        .iter()
                        .enumerate()
                        .map(|(j, &x)| lattice.snap(j, x))
                        .collect();
                    Sample::new(f, s.label)
                })
                .collect()
        }
    };
    Ok(out)
}

#[allow(clippy::needless_range_loop)]
fn warp_matrix(d: usize, magnitude: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; d]; d];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let rot = gauss(rng);
            let shear = gauss(rng);
            m[i][j] += magnitude * (rot + shear);
            m[j][i] -= magnitude * rot;
        }
    }
    m
}

/// Per-feature quantization lattice: points `lo + k·step`, `k = 0..=bins`.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub lo: Vec<f64>,
    pub step: Vec<f64>,
    pub bins: u32,
}

impl Lattice {
    pub fn fit(samples: &[Sample], bins: u32) -> Self {
        let d = samples[0].features.len();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for s in samples {
            for (j, &x) in s.features.iter().enumerate() {
                lo[j] = lo[j].min(x);
                hi[j] = hi[j].max(x);
            }
        }
        let step = lo.iter().zip(&hi).map(|(l, h)| (h - l) / f64::from(bins)).collect();
        Self { lo, step, bins }
    }

    pub fn index(&self, j: usize, x: f64) -> f64 {
        if self.step[j] == 0.0 {
            return 0.0;
        }
        ((x - self.lo[j]) / self.step[j])
            .round()
            .clamp(0.0, f64::from(self.bins))
    }

    pub fn snap(&self, j: usize, x: f64) -> f64 {
        self.lo[j] + self.index(j, x) * self.step[j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    #[default]
    DelimitedText,
}

pub fn write_delimited<W: Write>(bundle: &DatasetBundle, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# gen_seed={}", bundle.gen_seed)?;
    write!(out, "split")?;
    for j in 0..bundle.dim {
        write!(out, ",x{j}")?;
    }
    writeln!(out, ",label")?;
    let mut rows = |tag: &str, samples: &[Sample]| -> std::io::Result<()> {
        for s in samples {
            write!(out, "{tag}")?;
            for x in &s.features {
                write!(out, ",{x}")?;
            }
            writeln!(out, ",{}", s.label)?;
        }
        Ok(())
    };
    rows(POOL, &bundle.train_pool)?;
    rows(TEST_ID, &bundle.test_id)?;
    for (name, samples) in &bundle.test_ood {
        rows(&format!("{OOD_PREFIX}{name}"), samples)?;
    }
    Ok(())
}

pub fn export(bundle: &DatasetBundle, path: &Path) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_delimited(bundle, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn ingest(path: &Path, format: FileFormat) -> Result<DatasetBundle, DatasetError> {
    match format {
        FileFormat::DelimitedText => read_delimited(BufReader::new(File::open(path)?)),
    }
}

pub fn read_delimited<R: BufRead>(input: R) -> Result<DatasetBundle, DatasetError> {
    let mut gen_seed = 0;
    let mut dim: Option<usize> = None;
    let mut train_pool = Vec::new();
    let mut test_id = Vec::new();
    let mut test_ood: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    let mut max_label: Option<usize> = None;

    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("gen_seed=") {
                gen_seed = v.trim().parse().map_err(|_| DatasetError::Parse {
                    line: line_no,
                    reason: format!("bad gen_seed `{v}`"),
                })?;
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(d) = dim else {
            if cols.len() < 3 || cols[0] != "split" || cols[cols.len() - 1] != "label" {
                return Err(DatasetError::Schema {
                    line: line_no,
                    reason: "header must read `split,<features...>,label` with at least one feature".into(),
                });
            }
            dim = Some(cols.len() - 2);
            continue;
        };
        if cols.len() != d + 2 {
            return Err(DatasetError::Parse {
                line: line_no,
                reason: format!("expected {} columns ({d} features), found {}", d + 2, cols.len()),
            });
        }
        let mut features = Vec::with_capacity(d);
        for v in &cols[1..=d] {
            let x: f64 = v.parse().map_err(|_| DatasetError::Parse {
                line: line_no,
                reason: format!("bad feature value `{v}`"),
            })?;
            if !x.is_finite() {
                return Err(DatasetError::Parse {
                    line: line_no,
                    reason: format!("non-finite feature `{v}`"),
                });
            }
            features.push(x);
        }
        let label_col = cols[d + 1];
        let label: usize = label_col.parse().map_err(|_| DatasetError::Parse {
            line: line_no,
            reason: format!("bad label `{label_col}`"),
        })?;
        max_label = Some(max_label.map_or(label, |m| m.max(label)));
        let sample = Sample::new(features, label);
        match cols[0] {
            POOL => train_pool.push(sample),
            TEST_ID => test_id.push(sample),
            tag => match tag.strip_prefix(OOD_PREFIX) {
                Some(name) if !name.is_empty() => test_ood.entry(name.to_string()).or_default().push(sample),
                _ => {
                    return Err(DatasetError::Parse {
                        line: line_no,
                        reason: format!("unknown split tag `{tag}`"),
                    })
                }
            },
        }
    }

    let Some(dim) = dim else {
        return Err(DatasetError::Schema {
            line: 0,
            reason: "missing header row".into(),
        });
    };
    let Some(max_label) = max_label else {
        return Err(DatasetError::Schema {
            line: 0,
            reason: "file contains no samples".into(),
        });
    };
    Ok(DatasetBundle {
        train_pool,
        test_id,
        test_ood,
        num_classes: max_label + 1,
        dim,
        gen_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n: usize, d: usize) -> Vec<Sample> {
        let cfg = DatasetConfig::gaussian(n, 2, 2, d, 2.0, 3);
        generate(&cfg).unwrap().train_pool
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = DatasetConfig::gaussian(120, 40, 3, 4, 2.0, 7);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let mut moons = cfg.clone();
        moons.family = Family::TwoMoonsLike;
        assert_eq!(generate(&moons).unwrap(), generate(&moons).unwrap());
    }

    #[test]
    fn two_class_balance() {
        let bundle = generate(&DatasetConfig::gaussian(100, 11, 2, 2, 1.0, 1)).unwrap();
        let ones = bundle.train_pool.iter().filter(|s| s.label == 1).count();
        assert_eq!((100 - ones, ones), (50, 50));
        let ones = bundle.test_id.iter().filter(|s| s.label == 1).count();
        assert!(ones == 5 || ones == 6);
    }

    #[test]
    fn splits_are_disjoint_and_nonempty() {
        let bundle = generate(&DatasetConfig::gaussian(200, 50, 4, 3, 1.5, 9)).unwrap();
        assert!(!bundle.train_pool.is_empty() && !bundle.test_id.is_empty());
        assert_eq!(bundle.test_ood.len(), 6);
        for t in &bundle.test_id {
            assert!(bundle.train_pool.iter().all(|p| p.features != t.features));
        }
    }

    #[test]
    fn config_errors_name_the_field() {
        let mut cfg = DatasetConfig::gaussian(1, 10, 2, 2, 1.0, 0);
        let err = generate(&cfg).unwrap_err().to_string();
        assert!(err.contains("n_pool"), "{err}");
        cfg.n_pool = 10;
        cfg.class_separation = 0.0;
        assert!(generate(&cfg).unwrap_err().to_string().contains("class_separation"));
        cfg.class_separation = 1.0;
        cfg.dim = 1;
        assert!(generate(&cfg).unwrap_err().to_string().contains("dim"));
        cfg.dim = 2;
        cfg.classes = 1;
        assert!(generate(&cfg).unwrap_err().to_string().contains("classes"));
    }

    #[test]
    fn corruption_spec_parses() {
        let c: CorruptionSpec = "affine-warp:5".parse().unwrap();
        assert_eq!(c, CorruptionSpec::new(CorruptionKind::AffineWarp, 5));
        assert_eq!(c.to_string(), "affine-warp:5");
        assert!("blur:2".parse::<CorruptionSpec>().is_err());
        assert!("quantize".parse::<CorruptionSpec>().is_err());
    }

    #[test]
    fn level_zero_is_identity() {
        let s = samples(50, 3);
        for kind in CorruptionKind::ALL {
            assert_eq!(corrupt(&s, CorruptionSpec::new(kind, 0), 11).unwrap(), s);
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        let err = corrupt(&[], CorruptionSpec::new(CorruptionKind::Quantize, 2), 0).unwrap_err();
        assert!(matches!(err, DatasetError::EmptyInput));
    }

    #[test]
    fn corruption_preserves_labels_and_length() {
        let s = samples(64, 3);
        for kind in CorruptionKind::ALL {
            for level in [1, 2, 5, 9] {
                let out = corrupt(&s, CorruptionSpec::new(kind, level), 4).unwrap();
                assert_eq!(out.len(), s.len());
                assert!(out.iter().zip(&s).all(|(a, b)| a.label == b.label));
                assert!(out.iter().all(|x| x.features.iter().all(|v| v.is_finite())));
            }
        }
    }

    fn mean_displacement(input: &[Sample], out: &[Sample]) -> f64 {
        input
            .iter()
            .zip(out)
            .map(|(a, b)| sq_dist(&a.features, &b.features).sqrt())
            .sum::<f64>()
            / input.len() as f64
    }

    #[test]
    fn noise_severity_is_monotone() {
        let s = samples(1000, 4);
        let spec = |l| CorruptionSpec::new(CorruptionKind::AdditiveNoise, l);
        let d2 = mean_displacement(&s, &corrupt(&s, spec(2), 5).unwrap());
        let d5 = mean_displacement(&s, &corrupt(&s, spec(5), 5).unwrap());
        assert!(d5 > d2, "{d5} <= {d2}");
        let mut prev = 0.0;
        for level in 1..=8 {
            let d = mean_displacement(&s, &corrupt(&s, spec(level), 5).unwrap());
            assert!(d > prev);
            prev = d;
        }
    }

    #[test]
    fn quantized_features_lie_on_lattice() {
        let s = samples(300, 3);
        for level in [1, 2, 5, 8, 10] {
            let spec = CorruptionSpec::new(CorruptionKind::Quantize, level);
            let out = corrupt(&s, spec, 0).unwrap();
            // The lattice is defined by the input's per-feature range.
            let lattice = Lattice::fit(&s, spec.quantize_bins());
            for sample in &out {
                for (j, &x) in sample.features.iter().enumerate() {
                    let k = ((x - lattice.lo[j]) / lattice.step[j]).round();
                    assert!((0.0..=f64::from(spec.quantize_bins())).contains(&k));
                    assert_eq!(lattice.lo[j] + k * lattice.step[j], x, "level {level}");
                }
            }
            let distinct: std::collections::BTreeSet<u64> = out.iter().map(|s| s.features[0].to_bits()).collect();
            assert!(distinct.len() <= spec.quantize_bins() as usize + 1);
        }
    }

    #[test]
    fn affine_warp_grows_with_level() {
        let s = samples(500, 3);
        let spec = |l| CorruptionSpec::new(CorruptionKind::AffineWarp, l);
        let d2 = mean_displacement(&s, &corrupt(&s, spec(2), 1).unwrap());
        let d5 = mean_displacement(&s, &corrupt(&s, spec(5), 1).unwrap());
        assert!(d2 > 0.0 && d5 > d2);
    }

    #[test]
    fn ingest_infers_classes() {
        let text = "split,x0,x1,label\npool,1,2,0\npool,3,4,1\ntest_id,5,6,0\n";
        let bundle = read_delimited(text.as_bytes()).unwrap();
        assert_eq!(bundle.num_classes, 2);
        assert_eq!(bundle.dim, 2);
        assert_eq!(bundle.train_pool.len(), 2);
        assert_eq!(bundle.test_id[0], Sample::new(vec![5.0, 6.0], 0));
    }

    #[test]
    fn ingest_reports_wrong_arity_line() {
        let text = "split,x0,x1,label\npool,1,2,0\npool,3,1\ntest_id,5,6,0\n";
        match read_delimited(text.as_bytes()).unwrap_err() {
            DatasetError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ingest_rejects_bad_header_and_tags() {
        let err = read_delimited("x0,x1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::Schema { line: 1, .. }));
        let err = read_delimited("split,x0,label\nvalidation,1,0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }));
        let err = read_delimited("split,x0,label\npool,nan,0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }));
    }

    #[test]
    fn export_then_ingest_round_trips() {
        let mut cfg = DatasetConfig::gaussian(60, 20, 3, 3, 1.3, 42);
        cfg.clusters_per_class = 2;
        cfg.boundary_fraction = 0.2;
        let bundle = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        export(&bundle, &path).unwrap();
        assert_eq!(ingest(&path, FileFormat::DelimitedText).unwrap(), bundle);
    }
}
