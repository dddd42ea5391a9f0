//! Deterministic synthetic event streams.
//!
//! A [`PlantedPattern`] fixes the exact number of spikes every pixel must
//! emit, so collapsing the generated stream in count mode must give back the
//! planted grid. [`generate_corpus`] builds whole labelled corpora from
//! per-class blob templates for end-to-end tests.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::aer::{self, CodecError, Event, EventStream, Polarity, TIMESTAMP_LIMIT};
use crate::dataset::{self, CorpusEntry, DatasetError, DatasetManifest, SplitConfig};

pub const TRUTH_MANIFEST: &str = "truth.csv";

/// Minimum share of pixels on which two class templates must differ by at
/// least [`TEMPLATE_PIXEL_DELTA`].
pub const MIN_TEMPLATE_DIFFERENCE: f64 = 0.10;
pub const TEMPLATE_PIXEL_DELTA: f64 = 0.1;
const TEMPLATE_ATTEMPTS: u64 = 100;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Timing {
    /// Each pixel's spikes are spread evenly over `[0, duration)`.
    #[default]
    UniformSpacing,
    /// Timestamps 0, 1, 2, ... assigned by repeated row-major sweeps.
    RasterOrder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedPattern {
    pub width: u32,
    pub height: u32,
    /// Row-major target spike counts.
    pub counts: Vec<u32>,
    pub class_id: usize,
    pub timing: Timing,
}

impl PlantedPattern {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Emits exactly `counts[x, y]` ON events per pixel, sorted by timestamp.
pub fn generate_events(pattern: &PlantedPattern, duration: u64) -> Result<EventStream, SynthError> {
    let (w, h) = (pattern.width, pattern.height);
    if w == 0 || h == 0 || w > 65_536 || h > 65_536 {
        return Err(SynthError::InvalidArgument(format!(
            "pattern dimensions {w}x{h} out of range"
        )));
    }
    if pattern.counts.len() != w as usize * h as usize {
        return Err(SynthError::InvalidArgument(format!(
            "{} counts for a {w}x{h} grid",
            pattern.counts.len()
        )));
    }
    let total = pattern.total();
    if duration < total {
        return Err(SynthError::InvalidArgument(format!(
            "duration {duration} cannot hold {total} distinct timestamps"
        )));
    }
    if duration > u64::from(TIMESTAMP_LIMIT) {
        return Err(SynthError::InvalidArgument(format!(
            "duration {duration} exceeds the {TIMESTAMP_LIMIT} microsecond timestamp range"
        )));
    }
    let pixel = |i: usize| ((i % w as usize) as u16, (i / w as usize) as u16);
    let mut events = Vec::with_capacity(total as usize);
    match pattern.timing {
        Timing::RasterOrder => {
            let rounds = pattern.counts.iter().copied().max().unwrap_or(0);
            let mut t = 0u32;
            for round in 0..rounds {
                for (i, &c) in pattern.counts.iter().enumerate() {
                    if c > round {
                        let (x, y) = pixel(i);
                        events.push(Event::new(x, y, Polarity::On, t));
                        t += 1;
                    }
                }
            }
        }
        Timing::UniformSpacing => {
            for (i, &c) in pattern.counts.iter().enumerate() {
                let (x, y) = pixel(i);
                for j in 0..u64::from(c) {
                    let t = j * duration / u64::from(c);
                    events.push(Event::new(x, y, Polarity::On, t as u32));
                }
            }
            // stable: ties keep raster order
            events.sort_by_key(|e| e.timestamp);
        }
    }
    Ok(EventStream::new(events, w, h)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    /// Standard deviation of per-pixel Gaussian noise, relative to the peak count.
    pub noise: f64,
    /// Expected spike count at a template's brightest pixel.
    pub peak_count: u32,
    pub duration: u64,
    pub timing: Timing,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_classes: 3,
            samples_per_class: 100,
            width: 32,
            height: 32,
            seed: 0,
            noise: 0.1,
            peak_count: 20,
            duration: 300_000,
            timing: Timing::UniformSpacing,
        }
    }
}

impl CorpusConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidArgument(m));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.samples_per_class == 0 {
            return bad("samples per class must be positive".into());
        }
        let max = u32::from(aer::MAX_ENCODED_COORD) + 1;
        if self.width == 0 || self.height == 0 || self.width > max || self.height > max {
            return bad(format!(
                "grid {}x{} must lie within 1..={max} per side",
                self.width, self.height
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        if self.peak_count == 0 {
            return bad("peak count must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSummary {
    pub files: Vec<PathBuf>,
    pub manifest: DatasetManifest,
    /// Pairwise template difference fractions, row-major `n_classes x n_classes`.
    pub template_differences: Vec<f64>,
}

pub fn class_name(class: usize) -> String {
    format!("class_{class:02}")
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ b.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sum of three Gaussian blobs, scaled so the maximum is 1.
fn blob_template(w: u32, h: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let side = f64::from(w.min(h));
    let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random::<f64>() * f64::from(w),
                rng.random::<f64>() * f64::from(h),
                side * rng.random_range(0.08..0.2),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    let mut t: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (f64::from(x) + 0.5, f64::from(y) + 0.5)))
        .map(|(x, y)| {
            blobs
                .iter()
                .map(|&(cx, cy, s, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
                .sum()
        })
        .collect();
    let max = t.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        t.iter_mut().for_each(|v| *v /= max);
    }
    t
}

pub fn template_difference(a: &[f64], b: &[f64]) -> f64 {
    let differing = a
        .iter()
        .zip(b)
        .filter(|(x, y)| (*x - *y).abs() >= TEMPLATE_PIXEL_DELTA)
        .count();
    differing as f64 / a.len() as f64
}

/// One template per class; a template too similar to an earlier class is
/// redrawn from a derived seed.
pub fn class_templates(config: &CorpusConfig) -> Result<Vec<Vec<f64>>, SynthError> {
    config.validate()?;
    let mut templates: Vec<Vec<f64>> = Vec::with_capacity(config.n_classes);
    for c in 0..config.n_classes {
        let accepted = (0..TEMPLATE_ATTEMPTS).find_map(|attempt| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, c as u64, u64::MAX - attempt));
            let t = blob_template(config.width, config.height, &mut rng);
            templates
                .iter()
                .all(|o| template_difference(o, &t) >= MIN_TEMPLATE_DIFFERENCE)
                .then_some(t)
        });
        templates.push(accepted.ok_or_else(|| {
            SynthError::InvalidArgument(format!(
                "could not draw a distinct template for class {c} on a {}x{} grid",
                config.width, config.height
            ))
        })?);
    }
    Ok(templates)
}

/// Planted counts for one sample: the class template scaled by a random gain
/// in `[0.8, 1.2]` plus Gaussian pixel noise, rounded and clipped at zero.
pub fn sample_pattern(config: &CorpusConfig, template: &[f64], class: usize, index: usize) -> PlantedPattern {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, class as u64, index as u64));
    let peak = f64::from(config.peak_count);
    let gain: f64 = rng.random_range(0.8..1.2);
    let counts = template
        .iter()
        .map(|&v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            (peak * (v * gain + config.noise * n)).round().max(0.0) as u32
        })
        .collect();
    PlantedPattern {
        width: config.width,
        height: config.height,
        counts,
        class_id: class,
        timing: config.timing,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    fs::write(path, bytes).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `class_XX/sample_YYYY.bin` files under `out_dir` plus a
/// [`TRUTH_MANIFEST`] holding every file's class and a seeded split.
pub fn generate_corpus(config: &CorpusConfig, out_dir: &Path) -> Result<CorpusSummary, SynthError> {
    let templates = class_templates(config)?;
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for (c, template) in templates.iter().enumerate() {
        let category = class_name(c);
        let dir = out_dir.join(&category);
        fs::create_dir_all(&dir).map_err(|source| SynthError::Io {
            path: dir.clone(),
            source,
        })?;
        for i in 0..config.samples_per_class {
            let pattern = sample_pattern(config, template, c, i);
            let total = pattern.total();
            // Very noisy or bright settings can plant more spikes than the
            // window has microseconds; stretch the window instead of failing.
            let duration = config.duration.max(total);
            let stream = generate_events(&pattern, duration)?;
            let name = format!("sample_{i:04}.bin");
            let path = dir.join(&name);
            write_file(&path, &aer::encode_stream(&stream)?)?;
            files.push(path);
            entries.push(CorpusEntry {
                category: category.clone(),
                path: format!("{category}/{name}"),
            });
        }
    }
    let split_cfg = SplitConfig {
        seed: config.seed,
        ..Default::default()
    };
    let manifest = if config.samples_per_class >= 2 {
        dataset::split(&entries, &split_cfg)?
    } else {
        DatasetManifest {
            entries: entries
                .iter()
                .map(|e| dataset::ManifestEntry {
                    path: e.path.clone(),
                    category: e.category.clone(),
                    split: dataset::Split::Train,
                })
                .collect(),
        }
    };
    write_file(
        &out_dir.join(TRUTH_MANIFEST),
        dataset::write_manifest(&manifest)?.as_bytes(),
    )?;
    let n = templates.len();
    let template_differences = (0..n * n)
        .map(|k| template_difference(&templates[k / n], &templates[k % n]))
        .collect();
    Ok(CorpusSummary {
        files,
        manifest,
        template_differences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aer::validate_stream;
    use crate::collapse::{accumulate, CollapseMode};
    use proptest::prelude::*;
    use rand::Rng;

    fn pattern(w: u32, h: u32, counts: Vec<u32>, timing: Timing) -> PlantedPattern {
        PlantedPattern { width: w, height: h, counts, class_id: 0, timing }
    }

    #[test]
    fn raster_order_plants_exact_counts() {
        let p = pattern(2, 2, vec![2, 1, 0, 4], Timing::RasterOrder);
        let s = generate_events(&p, 7).unwrap();
        assert_eq!(s.len(), 7);
        let ts: Vec<u32> = s.events.iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, (0..7).collect::<Vec<_>>());
        assert_eq!(accumulate(&s, CollapseMode::Count).values, vec![2, 1, 0, 4]);
        assert!(generate_events(&p, 6).is_err());
    }

    #[test]
    fn degenerate_and_single_spike() {
        let zero = pattern(3, 3, vec![0; 9], Timing::RasterOrder);
        assert!(generate_events(&zero, 0).unwrap().is_empty());
        let one = pattern(1, 1, vec![1], Timing::UniformSpacing);
        let s = generate_events(&one, 100).unwrap();
        assert_eq!(s.events, vec![Event::new(0, 0, Polarity::On, 0)]);
    }

    #[test]
    fn uniform_spacing_spreads_spikes() {
        let p = pattern(1, 1, vec![4], Timing::UniformSpacing);
        let s = generate_events(&p, 400).unwrap();
        let ts: Vec<u32> = s.events.iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![0, 100, 200, 300]);
    }

    #[test]
    fn corpus_layout_and_determinism() {
        let cfg = CorpusConfig { samples_per_class: 4, width: 12, height: 10, ..Default::default() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = generate_corpus(&cfg, a.path()).unwrap();
        generate_corpus(&cfg, b.path()).unwrap();
        assert_eq!(sa.files.len(), 12);
        for f in &sa.files {
            let rel = f.strip_prefix(a.path()).unwrap();
            assert_eq!(fs::read(f).unwrap(), fs::read(b.path().join(rel)).unwrap());
        }
        assert_eq!(
            fs::read(a.path().join(TRUTH_MANIFEST)).unwrap(),
            fs::read(b.path().join(TRUTH_MANIFEST)).unwrap()
        );
        let n = cfg.n_classes;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    assert!(sa.template_differences[i * n + j] >= MIN_TEMPLATE_DIFFERENCE);
                }
            }
        }
        assert!(generate_corpus(&CorpusConfig { n_classes: 1, ..cfg }, a.path()).is_err());
    }

    proptest! {
        #[test]
        fn generated_streams_collapse_to_planted_counts(
            w in 1u32..6, h in 1u32..6, seed in any::<u64>(), raster in any::<bool>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let counts: Vec<u32> = (0..w * h).map(|_| rng.random_range(0..6)).collect();
            let timing = if raster { Timing::RasterOrder } else { Timing::UniformSpacing };
            let p = pattern(w, h, counts.clone(), timing);
            let s = generate_events(&p, 1000).unwrap();
            let counts64: Vec<u64> = counts.iter().map(|&c| u64::from(c)).collect();
            prop_assert_eq!(accumulate(&s, CollapseMode::Count).values, counts64);
            let r = validate_stream(&s);
            prop_assert_eq!(r.bounds_violations, 0);
            prop_assert_eq!(r.inversions, 0);
        }
    }
}
