//! Datasets: synthetic generation with a controllable hardness mix, delimited
//! and record-per-line file I/O, text featurization, splitting, and
//! standardization.
//!
//! The delimited format is comma-separated UTF-8 with a mandatory header row
//! `label,f0,f1,...`, one instance per row, floats written in shortest
//! round-trip decimal. Lines starting with `#` are metadata comments
//! (`# key=value`) and are skipped by the parser; emitted tables use them to
//! carry the config hash and seed.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{fnv1a64, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: usize,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Full,
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>, num_classes: usize, split: SplitTag) -> Result<Dataset> {
        if instances.is_empty() {
            return Err(Error::Data("dataset has no instances".to_string()));
        }
        let feature_dim = instances[0].features.len();
        let mut ids = BTreeSet::new();
        for inst in &instances {
            if inst.features.len() != feature_dim {
                return Err(Error::Data(format!(
                    "instance {}: feature dim {} differs from {}",
                    inst.id,
                    inst.features.len(),
                    feature_dim
                )));
            }
            if inst.label >= num_classes {
                return Err(Error::Data(format!(
                    "instance {}: label {} outside 0..{}",
                    inst.id, inst.label, num_classes
                )));
            }
            if !ids.insert(inst.id) {
                return Err(Error::Data(format!("duplicate instance id {}", inst.id)));
            }
        }
        Ok(Dataset {
            instances,
            num_classes,
            feature_dim,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Split datasets as produced by [`split_standardize`].
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

// --- synthetic generation ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub n: usize,
    pub feature_dim: usize,
    /// Fraction of instances placed far from the decision boundary.
    pub easy_fraction: f64,
    /// Radial margin of easy instances.
    pub margin_easy: f64,
    /// Radial margin of hard instances.
    pub margin_hard: f64,
    /// Label-flip probability applied to hard instances only.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 4,
            n: 4000,
            feature_dim: 16,
            easy_fraction: 0.5,
            margin_easy: 4.0,
            margin_hard: 1.0,
            noise: 0.05,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("synthetic: num_classes must be >= 2".to_string()));
        }
        if self.n < self.num_classes {
            return Err(Error::Config(format!(
                "synthetic: n = {} below num_classes = {}",
                self.n, self.num_classes
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("synthetic: feature_dim must be >= 1".to_string()));
        }
        if !(self.margin_easy > 0.0) || !(self.margin_hard > 0.0) {
            return Err(Error::Config("synthetic: margins must be positive".to_string()));
        }
        if !(0.0..=1.0).contains(&self.easy_fraction) {
            return Err(Error::Config("synthetic: easy_fraction outside [0, 1]".to_string()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config("synthetic: noise outside [0, 1]".to_string()));
        }
        Ok(())
    }
}

/// Gaussian-mixture classes along unit directions. Instance `i` belongs to
/// class `i % num_classes`, so class counts differ by at most one. Within a
/// class, the first `easy_fraction` of instances sit at `margin_easy` from
/// the origin and the rest at `margin_hard` with label noise, giving a graded
/// hardness spectrum from unit cluster noise.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let root = Rng::new(seed);
    let mut centers_rng = root.substream("centers");
    let mut cloud_rng = root.substream("cloud");
    let mut noise_rng = root.substream("label-noise");

    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.feature_dim).map(|_| centers_rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let class_count = |c: usize| (spec.n - c).div_ceil(spec.num_classes);

    let mut instances = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let class = i % spec.num_classes;
        let pos_in_class = i / spec.num_classes;
        let easy_count = (spec.easy_fraction * class_count(class) as f64).round() as usize;
        let easy = pos_in_class < easy_count;
        let margin = if easy { spec.margin_easy } else { spec.margin_hard };

        let features: Vec<f64> = centers[class]
            .iter()
            .map(|&c| c * margin + cloud_rng.normal())
            .collect();

        let mut label = class;
        if !easy && spec.noise > 0.0 && noise_rng.next_f64() < spec.noise {
            let offset = 1 + noise_rng.below(spec.num_classes - 1);
            label = (class + offset) % spec.num_classes;
        }
        instances.push(Instance {
            id: i,
            features,
            label,
        });
    }
    Dataset::new(instances, spec.num_classes, SplitTag::Full)
}

// --- splitting and standardization ---

/// Disjoint seeded shuffle split, then standardize every split with the
/// train split's per-dimension mean and (population) variance.
pub fn split_standardize(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<DataSplits> {
    let (ft, fd, fe) = fractions;
    if !(ft > 0.0 && fd > 0.0 && fe > 0.0) {
        return Err(Error::Config("split fractions must be positive".to_string()));
    }
    if (ft + fd + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions sum to {}, expected 1",
            ft + fd + fe
        )));
    }
    let n = ds.len();
    let n_train = (ft * n as f64).round() as usize;
    let n_dev = (fd * n as f64).round() as usize;
    if n_train == 0 || n_dev == 0 || n_train + n_dev >= n {
        return Err(Error::Config(format!(
            "split sizes {}/{}/{} leave an empty split",
            n_train,
            n_dev,
            n as i64 - n_train as i64 - n_dev as i64
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::new(seed).substream("split-shuffle");
    rng.shuffle(&mut order);

    let take = |range: std::ops::Range<usize>| -> Vec<Instance> {
        order[range].iter().map(|&i| ds.instances[i].clone()).collect()
    };
    let mut train = take(0..n_train);
    let mut dev = take(n_train..n_train + n_dev);
    let mut test = take(n_train + n_dev..n);

    // train statistics only; dev/test reuse them
    let dim = ds.feature_dim;
    let mut mean = vec![0.0; dim];
    for inst in &train {
        for (m, &v) in mean.iter_mut().zip(&inst.features) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= train.len() as f64;
    }
    let mut var = vec![0.0; dim];
    for inst in &train {
        for ((va, &mu), &v) in var.iter_mut().zip(&mean).zip(&inst.features) {
            *va += (v - mu) * (v - mu);
        }
    }
    for v in &mut var {
        *v /= train.len() as f64;
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|&v| if v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 })
        .collect();

    for split in [&mut train, &mut dev, &mut test] {
        for inst in split.iter_mut() {
            for ((f, &mu), &s) in inst.features.iter_mut().zip(&mean).zip(&scale) {
                *f = (*f - mu) * s;
            }
        }
    }

    Ok(DataSplits {
        train: Dataset::new(train, ds.num_classes, SplitTag::Train)?,
        dev: Dataset::new(dev, ds.num_classes, SplitTag::Dev)?,
        test: Dataset::new(test, ds.num_classes, SplitTag::Test)?,
    })
}

// --- text featurization ---

/// Hashed bag of words: lowercase, whitespace tokens, FNV-1a bucket per
/// token, counts L2-normalized. Empty text maps to the zero vector.
pub fn featurize_text(texts: &[&str], dim: usize) -> Result<Vec<Vec<f64>>> {
    if dim < 16 {
        return Err(Error::Config(format!("featurize_text: dim {dim} below 16")));
    }
    Ok(texts
        .iter()
        .map(|text| {
            let mut counts = vec![0.0f64; dim];
            for token in text.to_lowercase().split_whitespace() {
                let bucket = (fnv1a64(token.as_bytes()) % dim as u64) as usize;
                counts[bucket] += 1.0;
            }
            let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 0.0 {
                for c in &mut counts {
                    *c /= norm;
                }
            }
            counts
        })
        .collect())
}

// --- file I/O ---

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    /// Comma-separated with a `label,f0,...` header row.
    Delimited,
    /// One JSON object per line: {"id":..,"label":..,"features":[..]}.
    RecordPerLine,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRow {
    #[serde(default)]
    id: Option<usize>,
    label: usize,
    features: Vec<f64>,
}

pub fn load_table(path: &Path, format: TableFormat) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_table(&text, format)
}

pub fn parse_table(text: &str, format: TableFormat) -> Result<Dataset> {
    match format {
        TableFormat::Delimited => parse_delimited(text),
        TableFormat::RecordPerLine => parse_record_per_line(text),
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim_end_matches('\r')))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
}

fn parse_delimited(text: &str) -> Result<Dataset> {
    let mut lines = data_lines(text);
    let (header_no, header) = lines
        .next()
        .ok_or_else(|| Error::Data("empty table: no header row".to_string()))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.first() != Some(&"label") {
        return Err(Error::Data(format!(
            "line {header_no}: header must start with 'label', got '{header}'"
        )));
    }
    let dim = columns.len() - 1;
    if dim == 0 {
        return Err(Error::Data(format!(
            "line {header_no}: header declares no feature columns"
        )));
    }

    let mut instances = Vec::new();
    let mut max_label = 0usize;
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Data(format!(
                "line {line_no}: {} fields, expected {}",
                fields.len(),
                dim + 1
            )));
        }
        let label: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("line {line_no}: bad label '{}'", fields[0])))?;
        let features = fields[1..]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("line {line_no}: bad feature '{f}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        max_label = max_label.max(label);
        instances.push(Instance {
            id: instances.len(),
            features,
            label,
        });
    }
    Dataset::new(instances, max_label + 1, SplitTag::Full)
}

fn parse_record_per_line(text: &str) -> Result<Dataset> {
    let mut instances = Vec::new();
    let mut max_label = 0usize;
    for (line_no, line) in data_lines(text) {
        let row: JsonRow =
            serde_json::from_str(line).map_err(|e| Error::Data(format!("line {line_no}: {e}")))?;
        max_label = max_label.max(row.label);
        instances.push(Instance {
            id: row.id.unwrap_or(instances.len()),
            features: row.features,
            label: row.label,
        });
    }
    Dataset::new(instances, max_label + 1, SplitTag::Full)
}

/// Render a dataset in the delimited format, metadata comments first.
pub fn render_dataset(ds: &Dataset, comments: &[(String, String)]) -> String {
    let mut out = String::new();
    for (key, value) in comments {
        let _ = writeln!(out, "# {key}={value}");
    }
    let _ = write!(out, "label");
    for d in 0..ds.feature_dim {
        let _ = write!(out, ",f{d}");
    }
    let _ = writeln!(out);
    for inst in &ds.instances {
        let _ = write!(out, "{}", inst.label);
        for f in &inst.features {
            let _ = write!(out, ",{f}");
        }
        let _ = writeln!(out);
    }
    out
}

pub fn write_dataset(path: &Path, ds: &Dataset, comments: &[(String, String)]) -> Result<()> {
    std::fs::write(path, render_dataset(ds, comments))?;
    Ok(())
}

/// Render an arbitrary result table in the same delimited format.
pub fn render_table(comments: &[(String, String)], header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    for (key, value) in comments {
        let _ = writeln!(out, "# {key}={value}");
    }
    let _ = writeln!(out, "{}", header.join(","));
    for row in rows {
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn balanced_classes_by_construction() {
        let spec = SyntheticSpec {
            num_classes: 2,
            n: 1000,
            ..SyntheticSpec::default()
        };
        let ds = gen_synthetic(&spec, 1).unwrap();
        // class assignment is i % 2; labels may differ only through noise on
        // hard instances, so count assignment classes via id parity
        let class0 = ds.instances.iter().filter(|i| i.id % 2 == 0).count();
        assert_eq!(class0, 500);
        assert_eq!(ds.len() - class0, 500);
    }

    #[test]
    fn noiseless_easy_data_keeps_labels() {
        let spec = SyntheticSpec {
            num_classes: 3,
            n: 300,
            easy_fraction: 1.0,
            noise: 0.0,
            ..SyntheticSpec::default()
        };
        let ds = gen_synthetic(&spec, 7).unwrap();
        for inst in &ds.instances {
            assert_eq!(inst.label, inst.id % 3);
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let spec = SyntheticSpec::default();
        let a = gen_synthetic(&spec, 5).unwrap();
        let b = gen_synthetic(&spec, 5).unwrap();
        assert_eq!(render_dataset(&a, &[]), render_dataset(&b, &[]));
        let c = gen_synthetic(&spec, 6).unwrap();
        assert_ne!(render_dataset(&a, &[]), render_dataset(&c, &[]));
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SyntheticSpec {
            n: 2,
            num_classes: 4,
            ..SyntheticSpec::default()
        };
        assert!(matches!(gen_synthetic(&spec, 0), Err(Error::Config(_))));
        let spec = SyntheticSpec {
            margin_easy: 0.0,
            ..SyntheticSpec::default()
        };
        assert!(gen_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn split_sizes_match_fractions() {
        let spec = SyntheticSpec {
            n: 100,
            ..SyntheticSpec::default()
        };
        let ds = gen_synthetic(&spec, 2).unwrap();
        let splits = split_standardize(&ds, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!(splits.train.len(), 80);
        assert_eq!(splits.dev.len(), 10);
        assert_eq!(splits.test.len(), 10);
        assert_eq!(splits.train.split, SplitTag::Train);
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let spec = SyntheticSpec {
            n: 211,
            ..SyntheticSpec::default()
        };
        let ds = gen_synthetic(&spec, 2).unwrap();
        let splits = split_standardize(&ds, (0.7, 0.15, 0.15), 9).unwrap();
        let mut all = BTreeSet::new();
        for split in [&splits.train, &splits.dev, &splits.test] {
            for inst in &split.instances {
                assert!(all.insert(inst.id), "id {} appears twice", inst.id);
            }
        }
        assert_eq!(all.len(), 211);
    }

    #[test]
    fn train_split_is_standardized() {
        let spec = SyntheticSpec {
            n: 400,
            ..SyntheticSpec::default()
        };
        let ds = gen_synthetic(&spec, 4).unwrap();
        let splits = split_standardize(&ds, (0.8, 0.1, 0.1), 5).unwrap();
        let n = splits.train.len() as f64;
        for d in 0..splits.train.feature_dim {
            let mean: f64 =
                splits.train.instances.iter().map(|i| i.features[d]).sum::<f64>() / n;
            let var: f64 = splits
                .train
                .instances
                .iter()
                .map(|i| (i.features[d] - mean) * (i.features[d] - mean))
                .sum::<f64>()
                / n;
            assert!(mean.abs() < 1e-9, "dim {d} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "dim {d} var {var}");
        }
    }

    #[test]
    fn dev_uses_train_statistics_not_its_own() {
        // Dev rows carry a large constant shift; standardized with train
        // statistics they must stay far from zero mean, which per-split
        // standardization would have erased.
        let mut instances = Vec::new();
        for i in 0..100 {
            let base = if i < 90 { 0.0 } else { 100.0 };
            instances.push(Instance {
                id: i,
                features: vec![base + (i % 7) as f64, base - (i % 5) as f64],
                label: i % 2,
            });
        }
        let ds = Dataset::new(instances, 2, SplitTag::Full).unwrap();
        let splits = split_standardize(&ds, (0.8, 0.1, 0.1), 11).unwrap();
        let n = splits.dev.len() as f64;
        let mut own_standardized = true;
        for d in 0..2 {
            let mean: f64 = splits.dev.instances.iter().map(|i| i.features[d]).sum::<f64>() / n;
            let var: f64 = splits
                .dev
                .instances
                .iter()
                .map(|i| (i.features[d] - mean) * (i.features[d] - mean))
                .sum::<f64>()
                / n;
            if mean.abs() > 1e-9 || (var - 1.0).abs() > 1e-9 {
                own_standardized = false;
            }
        }
        assert!(!own_standardized, "dev split looks standardized by its own stats");
    }

    #[test]
    fn empty_split_is_config_error() {
        let spec = SyntheticSpec {
            n: 8,
            num_classes: 2,
            ..SyntheticSpec::default()
        };
        let ds = gen_synthetic(&spec, 0).unwrap();
        assert!(matches!(
            split_standardize(&ds, (0.98, 0.01, 0.01), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn delimited_parse_small_file() {
        let text = "label,f0,f1\n0,1.5,-2\n1,0.25,3\n0,0,0\n";
        let ds = parse_table(text, TableFormat::Delimited).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.feature_dim, 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.instances[1].features, vec![0.25, 3.0]);
        assert_eq!(ds.instances[2].id, 2);
    }

    #[test]
    fn malformed_row_names_the_line() {
        let text = "label,f0,f1\n0,1.0,2.0\n,3.0,4.0\n";
        let err = parse_table(text, TableFormat::Delimited).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "message was: {msg}");

        let text = "label,f0,f1\n0,1.0\n";
        let err = parse_table(text, TableFormat::Delimited).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn record_per_line_parse() {
        let text =
            "{\"id\":0,\"label\":1,\"features\":[0.5,1.0]}\n{\"label\":0,\"features\":[2.0,3.0]}\n";
        let ds = parse_table(text, TableFormat::RecordPerLine).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.instances[1].id, 1);
        assert_eq!(ds.instances[1].label, 0);
    }

    #[test]
    fn write_then_load_is_identity() {
        let spec = SyntheticSpec {
            n: 60,
            num_classes: 3,
            feature_dim: 4,
            ..SyntheticSpec::default()
        };
        let ds = gen_synthetic(&spec, 21).unwrap();
        let text = render_dataset(&ds, &[("seed".to_string(), "21".to_string())]);
        let back = parse_table(&text, TableFormat::Delimited).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.instances.iter().zip(&back.instances) {
            assert_eq!(a.label, b.label);
            let ab: Vec<u64> = a.features.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.features.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb, "features drifted through the file format");
        }
    }

    #[test]
    fn featurize_empty_and_identical_texts() {
        let vecs = featurize_text(&["", "same text here", "same text here"], 32).unwrap();
        assert!(vecs[0].iter().all(|&v| v == 0.0));
        assert_eq!(vecs[1], vecs[2]);
    }

    #[test]
    fn featurize_hand_trace() {
        let dim = 4096;
        let vecs = featurize_text(&["a a b"], dim).unwrap();
        // independent trace of the same hashing scheme
        let bucket_a = (fnv1a64(b"a") % dim as u64) as usize;
        let bucket_b = (fnv1a64(b"b") % dim as u64) as usize;
        assert_ne!(bucket_a, bucket_b, "hash collision breaks this trace");
        let norm = 5.0f64.sqrt();
        assert!((vecs[0][bucket_a] - 2.0 / norm).abs() < 1e-15);
        assert!((vecs[0][bucket_b] - 1.0 / norm).abs() < 1e-15);
        let l2: f64 = vecs[0].iter().map(|v| v * v).sum();
        assert!((l2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn featurize_dim_bound() {
        assert!(matches!(featurize_text(&["x"], 8), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn dataset_file_roundtrip_exact(
            rows in proptest::collection::vec(
                (0usize..3, proptest::collection::vec(-1e6f64..1e6, 3)),
                1..40,
            )
        ) {
            let instances: Vec<Instance> = rows
                .iter()
                .enumerate()
                .map(|(i, (label, features))| Instance {
                    id: i,
                    features: features.clone(),
                    label: *label,
                })
                .collect();
            let ds = Dataset::new(instances, 3, SplitTag::Full).unwrap();
            let text = render_dataset(&ds, &[]);
            let back = parse_table(&text, TableFormat::Delimited).unwrap();
            for (a, b) in ds.instances.iter().zip(&back.instances) {
                prop_assert_eq!(a.label, b.label);
                for (x, y) in a.features.iter().zip(&b.features) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
