use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use aerframe::aer::{self, CodecError};
use aerframe::collapse::{
    collapse_stream, CollapseOptions, ResizeMethod, ResizeOrder, SaccadeSelection,
};
use aerframe::dataset::{self, DatasetError, DatasetManifest, Split, SplitConfig};
use aerframe::events::SaccadePlan;
use aerframe::frames::{self, FrameError};
use aerframe::imageio::{write_bmp_gray8, write_pgm};
use aerframe::probe::{
    self, decode_checkpoint, encode_checkpoint, he_init, AdamConfig, AdamState, LabeledSet,
    ModelOptions, ProbeError, TrainConfig,
};
use aerframe::synth::{self, CorpusConfig, SynthError, Timing};
use aerframe::{CollapseMode, Polarity};
use rayon::prelude::*;
use walkdir::WalkDir;

use crate::args::{
    CollapseArgs, EvalArgs, FormatArg, InspectArgs, MethodArg, ModeArg, ModelArgs, OrderArg,
    PolarityArg, SplitArgs, SplitChoice, SynthArgs, TimingArg, TrainArgs,
};
use crate::Failure;

type Outcome = Result<(), Failure>;

fn emit(out: &mut dyn Write, key: &str, value: impl Display) {
    let _ = writeln!(out, "{key}: {value}");
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| Failure::input(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn decode(path: &Path, dims: Option<(u32, u32)>) -> Result<aerframe::EventStream, Failure> {
    let bytes = read_input(path)?;
    aer::decode_stream(&bytes, dims)
        .map(|s| s.with_source_id(path.display().to_string()))
        .map_err(|e: CodecError| Failure::input(format!("{}: {e}", path.display())))
}

pub fn inspect(a: &InspectArgs, out: &mut dyn Write) -> Outcome {
    let stream = decode(&a.file, a.dims.map(|d| (d.0, d.1)))?;
    let report = aer::validate_stream(&stream);
    emit(out, "file", a.file.display());
    emit(out, "events", report.event_count);
    emit(out, "width", stream.width);
    emit(out, "height", stream.height);
    let first = stream.events.first().map_or(0, |e| e.timestamp);
    let last = stream.events.last().map_or(0, |e| e.timestamp);
    emit(out, "first_timestamp", first);
    emit(out, "last_timestamp", last);
    emit(out, "duration", report.duration);
    emit(out, "on", report.on_count);
    emit(out, "off", report.off_count);
    emit(out, "inversions", report.inversions);
    emit(out, "bounds_violations", report.bounds_violations);
    Ok(())
}

fn collapse_options(a: &CollapseArgs) -> Result<CollapseOptions, Failure> {
    let n_windows = match &a.boundaries {
        Some(b) => {
            let bounds: Vec<(u64, u64)> = b.iter().map(|b| (b.0, b.1)).collect();
            SaccadePlan::from_boundaries(&bounds).map_err(|e| Failure::config(e.to_string()))?;
            bounds.len()
        }
        None => a.windows,
    };
    if n_windows == 0 {
        return Err(Failure::config("--windows must be at least 1"));
    }
    let indices: Option<BTreeSet<usize>> = match (&a.saccade_indices, a.saccades) {
        (Some(list), _) => {
            if let Some(bad) = list.iter().find(|&&i| i >= n_windows) {
                return Err(Failure::config(format!(
                    "saccade index {bad} out of range for {n_windows} windows"
                )));
            }
            Some(list.iter().copied().collect())
        }
        (None, Some(n)) => {
            if n == 0 || n > n_windows {
                return Err(Failure::config(format!(
                    "--saccades must be between 1 and {n_windows}, got {n}"
                )));
            }
            Some((0..n).collect())
        }
        (None, None) => None,
    };
    let saccades = match (&a.boundaries, indices) {
        (Some(b), idx) => SaccadeSelection::Explicit {
            bounds: b.iter().map(|b| (b.0, b.1)).collect(),
            indices: idx.unwrap_or_else(|| (0..n_windows).collect()),
        },
        (None, None) if a.duration.is_none() => SaccadeSelection::All,
        (None, idx) => SaccadeSelection::Equal {
            windows: n_windows,
            span: a.duration,
            indices: idx.unwrap_or_else(|| (0..n_windows).collect()),
        },
    };
    Ok(CollapseOptions {
        polarity: match a.polarity {
            PolarityArg::On => Some(Polarity::On),
            PolarityArg::Off => Some(Polarity::Off),
            PolarityArg::Both => None,
        },
        saccades,
        mode: match a.mode {
            ModeArg::Count => CollapseMode::Count,
            ModeArg::TimeSum => CollapseMode::TimeSum,
        },
        resize: a.resize.map(|d| (d.0, d.1)),
        method: match a.resize_method {
            MethodArg::Nearest => ResizeMethod::Nearest,
            MethodArg::Bilinear => ResizeMethod::Bilinear,
        },
        order: match a.resize_order {
            OrderArg::QuantizeFirst => ResizeOrder::QuantizeThenResize,
            OrderArg::ResizeFirst => ResizeOrder::ResizeThenQuantize,
        },
    })
}

/// `(absolute input path, path relative to the input root)` pairs, sorted.
fn collapse_inputs(input: &Path) -> Result<Vec<(PathBuf, PathBuf)>, Failure> {
    if input.is_file() {
        let name = input
            .file_name()
            .map(PathBuf::from)
            .ok_or_else(|| Failure::input(format!("{}: not a file name", input.display())))?;
        return Ok(vec![(input.to_path_buf(), name)]);
    }
    if !input.is_dir() {
        return Err(Failure::input(format!("{}: no such file or directory", input.display())));
    }
    let mut found = Vec::new();
    for entry in WalkDir::new(input).sort_by_file_name() {
        let entry = entry.map_err(|e| Failure::input(e.to_string()))?;
        let is_bin = entry
            .path()
            .extension()
            .is_some_and(|x| x.eq_ignore_ascii_case("bin"));
        if entry.file_type().is_file() && is_bin {
            let rel = entry
                .path()
                .strip_prefix(input)
                .unwrap_or(entry.path())
                .to_path_buf();
            found.push((entry.path().to_path_buf(), rel));
        }
    }
    if found.is_empty() {
        return Err(Failure::input(format!("no .bin files under {}", input.display())));
    }
    Ok(found)
}

struct Collapsed {
    output: PathBuf,
    events: usize,
    all_zero: bool,
}

fn collapse_one(
    src: &Path,
    dst: &Path,
    a: &CollapseArgs,
    opts: &CollapseOptions,
) -> Result<Collapsed, Failure> {
    let stream = decode(src, a.dims.map(|d| (d.0, d.1)))?;
    let frame = collapse_stream(&stream, opts)
        .map_err(|e| Failure::config(format!("{}: {e}", src.display())))?;
    let bytes = match a.format {
        FormatArg::Bmp => write_bmp_gray8(&frame.grid),
        FormatArg::Pgm => write_pgm(&frame.grid),
    }
    .map_err(|e| Failure::input(format!("{}: {e}", dst.display())))?;
    write_output(dst, &bytes)?;
    Ok(Collapsed {
        output: dst.to_path_buf(),
        events: frame.events_used,
        all_zero: frame.all_zero,
    })
}

pub fn collapse(a: &CollapseArgs, out: &mut dyn Write) -> Outcome {
    let opts = collapse_options(a)?;
    if a.jobs == Some(0) {
        return Err(Failure::config("--jobs must be at least 1"));
    }
    let inputs = collapse_inputs(&a.input)?;
    let ext = match a.format {
        FormatArg::Bmp => "bmp",
        FormatArg::Pgm => "pgm",
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::config(format!("thread pool: {e}")))?;
    let stop = AtomicBool::new(false);
    let results: Vec<Option<Result<Collapsed, Failure>>> = pool.install(|| {
        inputs
            .par_iter()
            .map(|(src, rel)| {
                if stop.load(Ordering::Relaxed) {
                    return None;
                }
                let dst = a.output.join(rel).with_extension(ext);
                let r = collapse_one(src, &dst, a, &opts);
                if r.is_err() && !a.keep_going {
                    stop.store(true, Ordering::Relaxed);
                }
                Some(r)
            })
            .collect()
    });

    let (mut written, mut all_zero, mut failed) = (0usize, 0usize, 0usize);
    let mut first_failure = None;
    for ((_, rel), r) in inputs.iter().zip(results) {
        match r {
            None => {}
            Some(Ok(c)) => {
                written += 1;
                all_zero += usize::from(c.all_zero);
                let _ = writeln!(
                    out,
                    "frame: {} -> {} events={} all_zero={}",
                    rel.display(),
                    c.output.display(),
                    c.events,
                    c.all_zero
                );
            }
            Some(Err(f)) => {
                failed += 1;
                let _ = writeln!(out, "failed: {} {}", rel.display(), f.message);
                first_failure.get_or_insert(f);
            }
        }
    }
    emit(out, "files", inputs.len());
    emit(out, "written", written);
    emit(out, "all_zero_frames", all_zero);
    emit(out, "failures", failed);
    match first_failure {
        None => Ok(()),
        Some(f) if a.keep_going => Err(Failure {
            code: f.code,
            message: format!("{failed} of {} inputs failed", inputs.len()),
        }),
        Some(f) => Err(f),
    }
}

fn dataset_failure(e: DatasetError) -> Failure {
    match e {
        DatasetError::NotFound(_) | DatasetError::EmptyCorpus(_) | DatasetError::Io(_) => {
            Failure::input(e.to_string())
        }
        DatasetError::Parse { .. } => Failure::input(format!("manifest {e}")),
        DatasetError::SplitInfeasible { .. } | DatasetError::InvalidArgument(_) => {
            Failure::config(e.to_string())
        }
    }
}

pub fn split(a: &SplitArgs, out: &mut dyn Write) -> Outcome {
    let cfg = SplitConfig {
        val_fraction: a.val_fraction,
        seed: a.seed,
    };
    cfg.validate().map_err(dataset_failure)?;
    let exts: Vec<&str> = a.extensions.iter().map(|e| e.trim_start_matches('.')).collect();
    let entries = dataset::scan_corpus(&a.corpus, &exts).map_err(dataset_failure)?;
    let manifest = dataset::split(&entries, &cfg).map_err(dataset_failure)?;
    let text = dataset::write_manifest(&manifest).map_err(dataset_failure)?;
    write_output(&a.output, text.as_bytes())?;

    emit(out, "manifest", a.output.display());
    let cats = manifest.categories();
    emit(out, "categories", cats.len());
    for c in &cats {
        let _ = writeln!(
            out,
            "category: {c} train={} val={}",
            manifest.count(c, Split::Train),
            manifest.count(c, Split::Val)
        );
    }
    emit(out, "train", manifest.by_split(Split::Train).count());
    emit(out, "val", manifest.by_split(Split::Val).count());
    Ok(())
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    dataset::read_manifest(&text)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn frame_failure(e: FrameError) -> Failure {
    match e {
        FrameError::UnknownCategory(_) => Failure::config(e.to_string()),
        _ => Failure::input(e.to_string()),
    }
}

fn probe_failure(e: ProbeError) -> Failure {
    match e {
        ProbeError::Checkpoint(_) => Failure::input(e.to_string()),
        _ => Failure::config(e.to_string()),
    }
}

fn load_set(
    manifest: &DatasetManifest,
    frames_root: &Path,
    split: Option<Split>,
    categories: &[String],
) -> Result<(LabeledSet, Option<(u32, u32)>), Failure> {
    frames::load_labeled(manifest, frames_root, split, categories).map_err(frame_failure)
}

fn layer_dims(input: usize, m: &ModelArgs, classes: usize) -> Result<Vec<usize>, Failure> {
    if m.hidden.contains(&0) {
        return Err(Failure::config("--hidden widths must be positive"));
    }
    let mut dims = vec![input];
    dims.extend(&m.hidden);
    dims.push(classes);
    Ok(dims)
}

fn model_options(m: &ModelArgs) -> ModelOptions {
    ModelOptions {
        batchnorm: !m.no_batchnorm,
        dropout_rate: m.dropout_rate,
    }
}

pub fn train(a: &TrainArgs, out: &mut dyn Write) -> Outcome {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        shuffle: !a.no_shuffle,
        batchnorm: !a.model.no_batchnorm,
        dropout: !a.no_dropout,
    };
    cfg.validate().map_err(probe_failure)?;
    let adam = AdamConfig {
        lr: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        epsilon: a.adam_epsilon,
    };
    let manifest = load_manifest(&a.manifest)?;
    let categories = manifest.categories();
    if categories.len() < 2 {
        return Err(Failure::config(format!(
            "need at least 2 categories, manifest has {}",
            categories.len()
        )));
    }
    let (train_set, dims) = load_set(&manifest, &a.frames, Some(Split::Train), &categories)?;
    let Some((w, h)) = dims else {
        return Err(Failure::config("manifest has no training entries"));
    };
    let (val_set, val_dims) = load_set(&manifest, &a.frames, Some(Split::Val), &categories)?;
    if val_dims.is_some_and(|d| d != (w, h)) {
        return Err(Failure::input("validation frames differ in size from training frames"));
    }
    let val = (!val_set.is_empty()).then_some(&val_set);

    let layers = layer_dims(w as usize * h as usize, &a.model, categories.len())?;
    let model = he_init(&layers, a.seed, model_options(&a.model)).map_err(probe_failure)?;
    let optimizer = AdamState::new(&model.parameter_sizes(), adam);
    let outcome = probe::train(model, optimizer, &train_set, val, &cfg).map_err(probe_failure)?;

    write_output(&a.history, probe::format_history(&outcome.history).as_bytes())?;
    write_output(&a.checkpoint, &encode_checkpoint(&outcome.model, &outcome.optimizer))?;

    emit(out, "classes", categories.len());
    emit(out, "input", format!("{w}x{h}"));
    emit(
        out,
        "layers",
        layers.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
    );
    emit(out, "train_samples", train_set.len());
    emit(out, "val_samples", val_set.len());
    emit(out, "epochs", outcome.history.len());
    if let Some(last) = outcome.history.last() {
        emit(out, "final_train_loss", format!("{:.6}", last.train_loss));
        emit(out, "final_train_acc", format!("{:.6}", last.train_acc));
        if let Some(v) = last.val_acc {
            emit(out, "final_val_acc", format!("{v:.6}"));
        }
    }
    emit(out, "checkpoint", a.checkpoint.display());
    emit(out, "history", a.history.display());
    Ok(())
}

pub fn eval(a: &EvalArgs, out: &mut dyn Write) -> Outcome {
    let manifest = load_manifest(&a.manifest)?;
    let categories = manifest.categories();
    let (split, label) = match a.split {
        SplitChoice::Train => (Some(Split::Train), "train"),
        SplitChoice::Val => (Some(Split::Val), "val"),
        SplitChoice::All => (None, "all"),
    };
    let (set, dims) = load_set(&manifest, &a.frames, split, &categories)?;
    let Some((w, h)) = dims else {
        return Err(Failure::config(format!("manifest has no '{label}' entries")));
    };
    let (model, source) = match (&a.checkpoint, a.fresh_seed) {
        (Some(path), _) => {
            let bytes = read_input(path)?;
            let (model, _) = decode_checkpoint(&bytes)
                .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            (model, path.display().to_string())
        }
        (None, Some(seed)) => {
            let layers = layer_dims(w as usize * h as usize, &a.model, categories.len())?;
            let model = he_init(&layers, seed, model_options(&a.model)).map_err(probe_failure)?;
            (model, format!("fresh (seed {seed})"))
        }
        (None, None) => return Err(Failure::config("need --checkpoint or --fresh-seed")),
    };
    if model.input_dim() != set.features.cols() {
        return Err(Failure::config(format!(
            "model expects {} inputs, frames have {}",
            model.input_dim(),
            set.features.cols()
        )));
    }
    if model.n_classes() != categories.len() {
        return Err(Failure::config(format!(
            "model has {} classes, manifest has {}",
            model.n_classes(),
            categories.len()
        )));
    }
    let accuracy = probe::evaluate(&model, &set).map_err(probe_failure)?;
    emit(out, "model", source);
    emit(out, "split", label);
    emit(out, "samples", set.len());
    emit(out, "classes", categories.len());
    emit(out, "accuracy", format!("{accuracy:.6}"));
    Ok(())
}

pub fn synth(a: &SynthArgs, out: &mut dyn Write) -> Outcome {
    let cfg = CorpusConfig {
        n_classes: a.classes,
        samples_per_class: a.samples,
        width: a.width,
        height: a.height,
        seed: a.seed,
        noise: a.noise,
        peak_count: a.peak,
        duration: a.duration,
        timing: match a.timing {
            TimingArg::Uniform => Timing::UniformSpacing,
            TimingArg::Raster => Timing::RasterOrder,
        },
    };
    let summary = synth::generate_corpus(&cfg, &a.output).map_err(|e| match e {
        SynthError::InvalidArgument(_) => Failure::config(e.to_string()),
        _ => Failure::input(e.to_string()),
    })?;
    emit(out, "output", a.output.display());
    emit(out, "classes", a.classes);
    emit(out, "files", summary.files.len());
    emit(out, "manifest", a.output.join(synth::TRUTH_MANIFEST).display());
    emit(out, "train", summary.manifest.by_split(Split::Train).count());
    emit(out, "val", summary.manifest.by_split(Split::Val).count());
    let n = a.classes;
    let min_diff = (0..n * n)
        .filter(|k| k / n != k % n)
        .map(|k| summary.template_differences[k])
        .fold(f64::INFINITY, f64::min);
    if min_diff.is_finite() {
        emit(out, "min_template_difference", format!("{min_diff:.4}"));
    }
    Ok(())
}
