//! Corpus discovery, stratified train/validation splits and manifest files.
//!
//! A corpus is a root directory holding one subdirectory per category; only
//! files directly inside a category directory belong to it. Manifest paths
//! are relative to the corpus root and always use `/` separators.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const MANIFEST_HEADER: &str = "path,category,split";

/// Validation share used when none is configured.
pub const DEFAULT_VAL_FRACTION: f64 = 0.15;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("corpus root not found: {0}")]
    NotFound(PathBuf),
    #[error("no matching files under {0}")]
    EmptyCorpus(PathBuf),
    #[error("category '{category}' has {count} file(s); at least 2 are needed to split")]
    SplitInfeasible { category: String, count: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// A file found by [`scan_corpus`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CorpusEntry {
    pub category: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub category: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Sorted distinct category names; a category's index is its class label.
    pub fn categories(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.category.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn count(&self, category: &str, split: Split) -> usize {
        self.entries
            .iter()
            .filter(|e| e.category == category && e.split == split)
            .count()
    }

    pub fn by_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            val_fraction: DEFAULT_VAL_FRACTION,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(DatasetError::InvalidArgument(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Lists `root/<category>/<file>` entries whose extension is in `extensions`
/// (case-insensitive, without the dot), sorted by path.
pub fn scan_corpus(root: &Path, extensions: &[&str]) -> Result<Vec<CorpusEntry>, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::NotFound(root.to_path_buf()));
    }
    let wanted: HashSet<String> = extensions.iter().map(|e| e.to_ascii_lowercase()).collect();
    let mut found = Vec::new();
    for cat in fs::read_dir(root)? {
        let cat = cat?;
        if !cat.file_type()?.is_dir() {
            continue;
        }
        let Some(category) = cat.file_name().to_str().map(str::to_owned) else {
            continue;
        };
        for file in fs::read_dir(cat.path())? {
            let file = file?;
            if !file.file_type()?.is_file() {
                continue;
            }
            let name = file.file_name();
            let Some(name) = name.to_str() else { continue };
            let ext_ok = Path::new(name)
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| wanted.contains(&e.to_ascii_lowercase()));
            if ext_ok {
                found.push(CorpusEntry {
                    path: format!("{category}/{name}"),
                    category: category.clone(),
                });
            }
        }
    }
    if found.is_empty() {
        return Err(DatasetError::EmptyCorpus(root.to_path_buf()));
    }
    found.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(found)
}

/// Number of validation samples for a category of `n`: `max(1, round(f * n))`,
/// capped at `n - 1` so the training side is never empty.
pub fn val_count(n: usize, val_fraction: f64) -> usize {
    let raw = (val_fraction * n as f64).round() as usize;
    raw.max(1).min(n.saturating_sub(1))
}

/// FNV-1a over the category name, mixed with the global seed through
/// SplitMix64, so one category's assignment never depends on the others.
fn category_seed(seed: u64, category: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in category.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stratified split: each category is shuffled with its own seeded generator
/// and its first `val_count` files go to validation. Output is sorted by path.
pub fn split(entries: &[CorpusEntry], config: &SplitConfig) -> Result<DatasetManifest, DatasetError> {
    config.validate()?;
    let mut by_cat: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for e in entries {
        if e.category.is_empty() {
            return Err(DatasetError::InvalidArgument(format!(
                "entry '{}' has an empty category",
                e.path
            )));
        }
        if !seen.insert(e.path.as_str()) {
            return Err(DatasetError::InvalidArgument(format!(
                "duplicate path '{}'",
                e.path
            )));
        }
        by_cat.entry(&e.category).or_default().push(&e.path);
    }

    let mut out = Vec::with_capacity(entries.len());
    for (category, mut paths) in by_cat {
        if paths.len() < 2 {
            return Err(DatasetError::SplitInfeasible {
                category: category.to_owned(),
                count: paths.len(),
            });
        }
        paths.sort_unstable();
        let mut order = paths.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(category_seed(config.seed, category));
        order.shuffle(&mut rng);
        let n_val = val_count(paths.len(), config.val_fraction);
        let val: HashSet<&str> = order[..n_val].iter().copied().collect();
        out.extend(paths.into_iter().map(|p| ManifestEntry {
            path: p.to_owned(),
            category: category.to_owned(),
            split: if val.contains(p) { Split::Val } else { Split::Train },
        }));
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetManifest { entries: out })
}

pub fn write_manifest(manifest: &DatasetManifest) -> Result<String, DatasetError> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in &manifest.entries {
        for field in [&e.path, &e.category] {
            if field.contains([',', '\n', '\r']) {
                return Err(DatasetError::InvalidArgument(format!(
                    "'{field}' contains a comma or line break"
                )));
            }
        }
        out.push_str(&format!("{},{},{}\n", e.path, e.category, e.split));
    }
    Ok(out)
}

pub fn read_manifest(text: &str) -> Result<DatasetManifest, DatasetError> {
    let mut lines = text.split_terminator('\n').enumerate();
    match lines.next() {
        Some((_, MANIFEST_HEADER)) => {}
        _ => {
            return Err(DatasetError::Parse {
                line: 1,
                reason: format!("expected header '{MANIFEST_HEADER}'"),
            })
        }
    }
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let err = |reason: String| DatasetError::Parse {
            line: lineno,
            reason,
        };
        let fields: Vec<&str> = line.split(',').collect();
        let [path, category, split] = fields[..] else {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        };
        if path.is_empty() || category.is_empty() {
            return Err(err("empty path or category".into()));
        }
        if !seen.insert(path) {
            return Err(err(format!("duplicate path '{path}'")));
        }
        entries.push(ManifestEntry {
            path: path.to_owned(),
            category: category.to_owned(),
            split: split.parse().map_err(err)?,
        });
    }
    Ok(DatasetManifest { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(sizes: &[(&str, usize)]) -> Vec<CorpusEntry> {
        sizes
            .iter()
            .flat_map(|&(c, n)| {
                (0..n).map(move |i| CorpusEntry {
                    category: c.to_owned(),
                    path: format!("{c}/{i:04}.bin"),
                })
            })
            .collect()
    }

    #[test]
    fn scans_flat_layout() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir_all(root.join("elephant")).unwrap();
        fs::create_dir_all(root.join("x/y")).unwrap();
        fs::write(root.join("elephant/b.bin"), b"").unwrap();
        fs::write(root.join("elephant/a.BIN"), b"").unwrap();
        fs::write(root.join("elephant/notes.txt"), b"").unwrap();
        fs::write(root.join("x/y/z.bin"), b"").unwrap();
        fs::write(root.join("top.bin"), b"").unwrap();
        let found = scan_corpus(root, &["bin"]).unwrap();
        let paths: Vec<_> = found.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, vec!["elephant/a.BIN", "elephant/b.bin"]);
        assert!(found.iter().all(|e| e.category == "elephant"));
    }

    #[test]
    fn scan_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            scan_corpus(dir.path(), &["bin"]),
            Err(DatasetError::EmptyCorpus(_))
        ));
        assert!(matches!(
            scan_corpus(&dir.path().join("missing"), &["bin"]),
            Err(DatasetError::NotFound(_))
        ));
    }

    #[test]
    fn split_counts() {
        let m = split(&corpus(&[("a", 40), ("b", 2)]), &SplitConfig::default()).unwrap();
        assert_eq!((m.count("a", Split::Train), m.count("a", Split::Val)), (34, 6));
        assert_eq!((m.count("b", Split::Train), m.count("b", Split::Val)), (1, 1));
        assert_eq!(val_count(10, 0.15), 2);
        assert_eq!(val_count(100, 0.15), 15);
        assert_eq!(val_count(2, 0.9), 1);
    }

    #[test]
    fn split_is_deterministic() {
        let c = corpus(&[("a", 30), ("b", 17)]);
        let cfg = SplitConfig { seed: 7, ..Default::default() };
        let a = write_manifest(&split(&c, &cfg).unwrap()).unwrap();
        let b = write_manifest(&split(&c, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = split(&c, &SplitConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(write_manifest(&other).unwrap(), a);
    }

    #[test]
    fn split_rejects_singletons() {
        match split(&corpus(&[("a", 5), ("lonely", 1)]), &SplitConfig::default()) {
            Err(DatasetError::SplitInfeasible { category, count }) => {
                assert_eq!((category.as_str(), count), ("lonely", 1));
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad = SplitConfig { val_fraction: 1.0, seed: 0 };
        assert!(split(&corpus(&[("a", 5)]), &bad).is_err());
    }

    #[test]
    fn manifest_text_format() {
        let m = DatasetManifest {
            entries: vec![ManifestEntry {
                path: "cat/a.bin".into(),
                category: "cat".into(),
                split: Split::Val,
            }],
        };
        let text = write_manifest(&m).unwrap();
        assert_eq!(text, "path,category,split\ncat/a.bin,cat,val\n");
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_manifest(&text).unwrap(), m);

        match read_manifest("path,category,split\na,b,train\nc,d\n") {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_manifest("p,c,s\n"),
            Err(DatasetError::Parse { line: 1, .. })
        ));
        assert!(read_manifest("path,category,split\na,b,test\n").is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_every_category(
            sizes in proptest::collection::vec(2usize..60, 1..5),
            seed in any::<u64>(),
            frac in 0.05f64..0.95,
        ) {
            let names: Vec<String> = (0..sizes.len()).map(|i| format!("c{i}")).collect();
            let spec: Vec<(&str, usize)> = names.iter().map(String::as_str).zip(sizes.iter().copied()).collect();
            let c = corpus(&spec);
            let cfg = SplitConfig { val_fraction: frac, seed };
            let m = split(&c, &cfg).unwrap();
            prop_assert_eq!(m.entries.len(), c.len());
            let alt = split(&c, &SplitConfig { seed: seed.wrapping_add(1), ..cfg }).unwrap();
            for (name, n) in &spec {
                let v = m.count(name, Split::Val);
                prop_assert_eq!(v + m.count(name, Split::Train), *n);
                prop_assert_eq!(v, val_count(*n, frac));
                prop_assert!(((v as f64) / (*n as f64) - frac).abs() <= 1.0 / *n as f64 + 1e-12);
                prop_assert_eq!(alt.count(name, Split::Val), v);
            }
            prop_assert_eq!(read_manifest(&write_manifest(&m).unwrap()).unwrap(), m);
        }
    }
}
