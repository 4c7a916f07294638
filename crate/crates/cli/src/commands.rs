use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fsaudio_core::pipeline::cache::materialize_cache;
use fsaudio_core::pipeline::manifest::{ingest_manifest_file, prune_dataset, write_manifest};
use fsaudio_core::pipeline::spectrogram::SpectrogramConfig;
use fsaudio_core::sampler::{ClassPool, EpisodeSampler, SamplerMode};
use fsaudio_core::splits::{generate_split, render_split};
use fsaudio_core::store::StatsRecord;
use fsaudio_core::synth::{generate_synthetic_dataset, SynthSpec};
use fsaudio_core::{EpisodeSpec, NormalizationStats, Partition};
use fsaudio_meta::eval::{sweep_shots, sweep_ways, EvalOptions, EvalReport, SweepEntry};
use fsaudio_meta::report::{shot_plot_data, way_plot_data};
use fsaudio_meta::{build_model, evaluate, train, validation_sampler, LearnerState, ResultsTable, TrainData};
use serde::Serialize;

use crate::config::{check_dataset_id, ExperimentConfig, Overrides};
use crate::failure::invalid;
use crate::workspace::{write_atomic, Workspace};

const CONFIG_FILE: &str = "config.toml";
const CHECKPOINT_FILE: &str = "checkpoint.json";
const STATS_FILE: &str = "norm_stats.json";
const LOG_FILE: &str = "train_log.ndjson";
const SUMMARY_FILE: &str = "train_summary.json";

fn json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn synth(ws: &Workspace, preset: &str, out: Option<&Path>, seed: Option<u64>, noise: Option<f64>) -> Result<()> {
    let mut spec = SynthSpec::preset(preset).map_err(|e| invalid(e.to_string()))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = noise {
        spec.noise_std = n;
    }
    spec.validate().map_err(|e| invalid(e.to_string()))?;
    let dir = out.map_or_else(|| ws.data_dir(&spec.name), |p| ws.resolve(p));
    let index = generate_synthetic_dataset(&spec, &dir)?;
    println!(
        "synth: {} clips over {} classes -> {}",
        index.clips.len(),
        index.n_classes(),
        dir.join("manifest.csv").display()
    );
    Ok(())
}

pub struct PrepareArgs<'a> {
    pub dataset: &'a str,
    pub manifest: &'a Path,
    pub max_duration: Option<f64>,
    pub min_class_count: Option<usize>,
    pub spectrogram: SpectrogramConfig,
}

pub fn prepare(ws: &Workspace, a: PrepareArgs) -> Result<()> {
    check_dataset_id(a.dataset)?;
    if a.max_duration.is_some_and(|d| d.is_nan() || d <= 0.0) {
        return Err(invalid("--max-duration must be positive"));
    }
    a.spectrogram
        .validate()
        .map_err(|e| invalid(format!("spectrogram: {e}")))?;
    let manifest_path = ws.resolve(a.manifest);
    if !manifest_path.exists() {
        return Err(invalid(format!("manifest {} does not exist", manifest_path.display())));
    }
    let mut index = ingest_manifest_file(a.dataset, &manifest_path)?;
    let before = (index.clips.len(), index.n_classes());
    if a.max_duration.is_some() || a.min_class_count.is_some() {
        index = prune_dataset(
            &index,
            a.max_duration.unwrap_or(f64::INFINITY),
            a.min_class_count.unwrap_or(0),
        )?;
    }
    let cache = materialize_cache(&index, &a.spectrogram, &ws.dataset_cache(a.dataset))?;
    for e in &cache.errors {
        eprintln!("prepare: skipped clip `{}`: {}", e.clip_id, e.message);
    }
    let cached: BTreeSet<&str> = cache.entries.iter().map(|e| e.parent_id.as_str()).collect();
    let kept: Vec<_> = index
        .clips
        .iter()
        .filter(|c| cached.contains(c.clip_id.as_str()))
        .cloned()
        .collect();
    if kept.is_empty() {
        anyhow::bail!("no clip of `{}` could be converted", a.dataset);
    }
    let mut csv = Vec::new();
    write_manifest(&kept, &mut csv)?;
    write_atomic(&ws.prepared_index(a.dataset), &csv)?;
    let classes: BTreeSet<&str> = kept.iter().map(|c| c.class_label.as_str()).collect();
    println!(
        "prepare: {}: {} clips / {} classes in, {} clips / {} classes kept, {} sub-clips ({} written, {} reused)",
        a.dataset,
        before.0,
        before.1,
        kept.len(),
        classes.len(),
        cache.entries.len(),
        cache.written,
        cache.skipped
    );
    Ok(())
}

pub fn parse_ratios(text: &str) -> Result<[u32; 3]> {
    let parts: Vec<&str> = text.split('/').collect();
    let bad = || invalid(format!("--ratios `{text}` must look like 7/1/2"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0u32; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

pub fn split(ws: &Workspace, dataset: &str, seed: u64, ratios: [u32; 3]) -> Result<()> {
    check_dataset_id(dataset)?;
    let classes = ws.prepared_classes(dataset)?;
    let split = generate_split(dataset, &classes, ratios, seed).map_err(|e| invalid(e.to_string()))?;
    let path = ws.split_path(dataset);
    write_atomic(&path, render_split(&split).as_bytes())?;
    println!(
        "split: {dataset}: {}/{}/{} classes -> {}",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    algorithm: String,
    steps_run: usize,
    best_step: usize,
    best_val_accuracy: Option<f64>,
    stopped_early: bool,
}

pub fn train_cmd(ws: &Workspace, config: Option<&Path>, overrides: &Overrides) -> Result<()> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(&ws.resolve(p))?,
        None => ExperimentConfig::from_overrides(overrides)?,
    };
    cfg.apply(overrides);
    let cfg = cfg.resolve()?;
    cfg.sampler_config().validate().map_err(|e| invalid(e.to_string()))?;

    // Everything on disk is checked before any compute.
    let spec = cfg.episode;
    let mut splits = Vec::new();
    let mut manifests = Vec::new();
    for ds in &cfg.data.datasets {
        let split = ws.split(ds)?;
        manifests.push(ws.cache_manifest(ds, &cfg.spectrogram)?);
        splits.push(split);
    }
    for ds in &cfg.data.cross {
        ws.prepared_classes(ds)?;
        ws.cache_manifest(ds, &cfg.spectrogram)?;
    }
    let train_classes: Vec<usize> = splits.iter().map(|s| s.train.len()).collect();
    let available = match cfg.data.mode {
        SamplerMode::Single | SamplerMode::JointWithin => train_classes.iter().copied().max().unwrap_or(0),
        SamplerMode::JointFree => train_classes.iter().sum(),
    };
    if available < spec.n_way {
        return Err(invalid(format!(
            "{}-way training needs {} train classes, the splits provide {available}",
            spec.n_way, spec.n_way
        )));
    }
    let out_dir = ws.resolve(cfg.output_dir());

    let wanted: Vec<(String, BTreeSet<String>)> = cfg
        .data
        .datasets
        .iter()
        .zip(&splits)
        .map(|(ds, s)| (ds.clone(), s.train.union(&s.val).cloned().collect()))
        .collect();
    let raw = ws.load_store(&wanted, &manifests)?;
    let train_parts: Vec<(String, BTreeSet<String>)> = cfg
        .data
        .datasets
        .iter()
        .zip(&splits)
        .map(|(ds, s)| (ds.clone(), s.train.clone()))
        .collect();
    let stats = raw.partition_stats(&train_parts, cfg.data.normalization)?;
    let store = raw.normalized(&stats.stats)?;
    drop(raw);

    let pools = |part: Partition| -> Vec<ClassPool> {
        cfg.data
            .datasets
            .iter()
            .zip(&splits)
            .map(|(ds, s)| ClassPool::from_store(&store, ds, &s.partition(part)))
            .filter(|p| p.n_classes() > 0)
            .collect()
    };
    let train_sampler = EpisodeSampler::new(cfg.data.mode, spec, pools(Partition::Train))?;
    let val_pools = pools(Partition::Val);
    let val_sampler = if val_pools.iter().map(ClassPool::n_classes).sum::<usize>() < 2 {
        None
    } else {
        // A single validation pool cannot feed a joint sampler.
        let mode = if val_pools.len() < 2 {
            SamplerMode::Single
        } else {
            cfg.data.mode
        };
        Some(validation_sampler(mode, spec, val_pools)?)
    };
    let data = TrainData {
        store: &store,
        train: &train_sampler,
        val: val_sampler.as_ref(),
    };
    let model = build_model(cfg.backbone(), cfg.train.algorithm, spec.n_way, cfg.train.seed)?;
    let outcome = train(model, &data, &cfg.train)?;

    let state = LearnerState::from_learner(&outcome.learner, cfg.train.seed, outcome.best_step as u64);
    let mut log = Vec::new();
    for rec in &outcome.log {
        serde_json::to_writer(&mut log, rec)?;
        log.push(b'\n');
    }
    let summary = TrainSummary {
        algorithm: cfg.train.algorithm.to_string(),
        steps_run: outcome.log.iter().filter(|r| r.phase == "episodic").count(),
        best_step: outcome.best_step,
        best_val_accuracy: outcome.best_val_accuracy,
        stopped_early: outcome.stopped_early,
    };
    write_atomic(&out_dir.join(CONFIG_FILE), cfg.render()?.as_bytes())?;
    write_atomic(&out_dir.join(STATS_FILE), &json(&stats)?)?;
    write_atomic(&out_dir.join(LOG_FILE), &log)?;
    write_atomic(&out_dir.join(SUMMARY_FILE), &json(&summary)?)?;
    write_atomic(&out_dir.join(CHECKPOINT_FILE), &json(&state)?)?;
    println!(
        "train: {} best step {} val {} -> {}",
        summary.algorithm,
        summary.best_step,
        summary
            .best_val_accuracy
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}")),
        out_dir.display()
    );
    Ok(())
}

/// A trained run directory.
struct Run {
    dir: PathBuf,
    cfg: ExperimentConfig,
    state: LearnerState,
    stats: NormalizationStats,
}

fn open_run(ws: &Workspace, dir: &Path) -> Result<Run> {
    let dir = ws.resolve(dir);
    let config = dir.join(CONFIG_FILE);
    let checkpoint = dir.join(CHECKPOINT_FILE);
    if !config.exists() || !checkpoint.exists() {
        return Err(invalid(format!(
            "{} holds no trained run (expected {CONFIG_FILE} and {CHECKPOINT_FILE}); run `fsaudio train` first",
            dir.display()
        )));
    }
    let cfg = ExperimentConfig::load(&config)?.resolve()?;
    let state: LearnerState = serde_json::from_slice(&std::fs::read(&checkpoint)?)
        .map_err(|e| invalid(format!("unreadable checkpoint {}: {e}", checkpoint.display())))?;
    let stats: StatsRecord =
        serde_json::from_slice(&std::fs::read(dir.join(STATS_FILE)).context("reading normalisation stats")?)
            .map_err(|e| invalid(format!("unreadable normalisation stats: {e}")))?;
    Ok(Run {
        dir,
        cfg,
        state,
        stats: stats.stats,
    })
}

/// A dataset partition to test on, with its cache checked.
struct Target {
    dataset: String,
    partition: Partition,
    classes: BTreeSet<String>,
    manifest: fsaudio_core::pipeline::cache::CacheManifest,
}

impl Target {
    fn file_stem(&self) -> String {
        format!("{}-{}", self.dataset, self.partition)
    }
}

fn target(ws: &Workspace, run: &Run, dataset: &str, partition: Option<Partition>, n_way: usize) -> Result<Target> {
    check_dataset_id(dataset)?;
    let trained_on = run.cfg.data.datasets.iter().any(|d| d == dataset);
    let partition = partition.unwrap_or(if trained_on { Partition::Test } else { Partition::All });
    if trained_on && partition != Partition::Test && partition != Partition::Val {
        return Err(invalid(format!(
            "`{dataset}` was used for training; only its val or test partition can be evaluated"
        )));
    }
    let classes = ws.partition_classes(dataset, partition)?;
    if classes.len() < n_way {
        return Err(invalid(format!(
            "{n_way}-way evaluation needs {n_way} classes, `{dataset}` {partition} has {}",
            classes.len()
        )));
    }
    let manifest = ws.cache_manifest(dataset, &run.cfg.spectrogram)?;
    Ok(Target {
        dataset: dataset.to_string(),
        partition,
        classes,
        manifest,
    })
}

fn target_sampler(
    ws: &Workspace,
    run: &Run,
    t: &Target,
    spec: EpisodeSpec,
) -> Result<(fsaudio_core::store::SpectrogramStore, EpisodeSampler)> {
    let raw = ws.load_store(
        &[(t.dataset.clone(), t.classes.clone())],
        std::slice::from_ref(&t.manifest),
    )?;
    let store = raw.normalized(&run.stats)?;
    let pool = ClassPool::from_store(&store, &t.dataset, &t.classes);
    let sampler = EpisodeSampler::new(SamplerMode::Single, spec, vec![pool])?;
    Ok((store, sampler))
}

pub struct EvalArgs<'a> {
    pub run: &'a Path,
    pub datasets: &'a [String],
    pub partition: Option<Partition>,
    pub n_tasks: Option<usize>,
    pub seed: Option<u64>,
}

pub fn evaluate_cmd(ws: &Workspace, a: EvalArgs) -> Result<()> {
    let run = open_run(ws, a.run)?;
    let spec = run.cfg.episode;
    let opts = EvalOptions {
        n_tasks: a.n_tasks.unwrap_or(run.cfg.eval.n_tasks),
        seed: a.seed.unwrap_or(run.cfg.eval.seed),
        keep_per_task: run.cfg.eval.keep_per_task,
    };
    if opts.n_tasks == 0 {
        return Err(invalid("--n-tasks must be positive"));
    }
    let names: Vec<String> = if a.datasets.is_empty() {
        run.cfg
            .data
            .datasets
            .iter()
            .chain(&run.cfg.data.cross)
            .cloned()
            .collect()
    } else {
        a.datasets.to_vec()
    };
    let targets = names
        .iter()
        .map(|d| target(ws, &run, d, a.partition, spec.n_way))
        .collect::<Result<Vec<_>>>()?;
    let learner = run.state.learner()?.with_cache();

    let mut outputs = Vec::new();
    for t in &targets {
        let (store, sampler) = target_sampler(ws, &run, t, spec)?;
        let report = evaluate(&learner, &store, &sampler, &t.dataset, opts)?;
        println!(
            "evaluate: {} {} {}: {:.4} ± {:.4} over {} tasks",
            report.algorithm, t.dataset, t.partition, report.mean_accuracy, report.ci95_halfwidth, report.n_tasks
        );
        outputs.push((
            run.dir.join("eval").join(format!("{}.json", t.file_stem())),
            json(&report)?,
        ));
    }
    for (path, bytes) in outputs {
        write_atomic(&path, &bytes)?;
    }
    Ok(())
}

/// `1..30`, `5..30:5` (inclusive, optional step) or `1,5,10`.
pub fn parse_grid(text: &str) -> Result<Vec<usize>> {
    let bad = || invalid(format!("grid `{text}` must look like 1..30, 5..30:5 or 1,5,10"));
    let values: Vec<usize> = if let Some((lo, rest)) = text.split_once("..") {
        let (hi, step) = rest.split_once(':').unwrap_or((rest, "1"));
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        let step: usize = step.trim().parse().map_err(|_| bad())?;
        if step == 0 || lo > hi {
            return Err(bad());
        }
        (lo..=hi).step_by(step).collect()
    } else {
        text.split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(values)
}

pub enum SweepAxis {
    Shots(Vec<usize>),
    Ways(Vec<usize>),
}

pub struct SweepArgs<'a> {
    pub run: &'a Path,
    pub dataset: &'a str,
    pub partition: Option<Partition>,
    pub axis: SweepAxis,
    pub n_tasks: Option<usize>,
    pub seed: Option<u64>,
}

pub fn sweep_cmd(ws: &Workspace, a: SweepArgs) -> Result<()> {
    let run = open_run(ws, a.run)?;
    let spec = run.cfg.episode;
    let opts = EvalOptions {
        n_tasks: a.n_tasks.unwrap_or(run.cfg.eval.n_tasks),
        seed: a.seed.unwrap_or(run.cfg.eval.seed),
        keep_per_task: false,
    };
    if opts.n_tasks == 0 {
        return Err(invalid("--n-tasks must be positive"));
    }
    if matches!(a.axis, SweepAxis::Ways(_)) && run.state.algorithm().is_gbml() {
        return Err(invalid(format!(
            "{} has a fixed-size output and is excluded from way sweeps",
            run.state.algorithm()
        )));
    }
    // The sampler is built at the trained N; way sweeps mark larger N unavailable.
    let t = target(ws, &run, a.dataset, a.partition, spec.n_way)?;
    let (store, sampler) = target_sampler(ws, &run, &t, spec)?;
    let learner = run.state.learner()?.with_cache();
    let (name, bytes) = match &a.axis {
        SweepAxis::Shots(ks) => {
            let reports = sweep_shots(&learner, &store, &sampler, &t.dataset, ks, opts)?;
            for r in &reports {
                println!(
                    "sweep: k={} {:.4} ± {:.4}",
                    r.spec.k_shot, r.mean_accuracy, r.ci95_halfwidth
                );
            }
            ("shots", json(&reports)?)
        }
        SweepAxis::Ways(ns) => {
            let entries = sweep_ways(&learner, &store, &sampler, &t.dataset, ns, opts)?;
            for e in &entries {
                match (&e.report, &e.unavailable_reason) {
                    (Some(r), _) => println!("sweep: N={} {:.4} ± {:.4}", e.n_way, r.mean_accuracy, r.ci95_halfwidth),
                    (None, reason) => println!("sweep: N={} unavailable: {}", e.n_way, reason.as_deref().unwrap_or("")),
                }
            }
            ("ways", json(&entries)?)
        }
    };
    write_atomic(
        &run.dir.join("sweep").join(format!("{}-{name}.json", t.file_stem())),
        &bytes,
    )
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// The directory itself when it is a run, otherwise its run subdirectories.
fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("eval").is_dir() || dir.join("sweep").is_dir() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.join("eval").is_dir() || path.join("sweep").is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&std::fs::read(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn report_cmd(ws: &Workspace, dir: &Path) -> Result<()> {
    let dir = ws.resolve(dir);
    if !dir.is_dir() {
        return Err(invalid(format!("{} is not a directory", dir.display())));
    }
    let runs = run_dirs(&dir)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut shots: Vec<EvalReport> = Vec::new();
    let mut ways: Vec<SweepEntry> = Vec::new();
    for run in &runs {
        for path in json_files(&run.join("eval"))? {
            reports.push(read_json(&path)?);
        }
        for path in json_files(&run.join("sweep"))? {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if name.ends_with("-shots.json") {
                shots.extend(read_json::<Vec<EvalReport>>(&path)?);
            } else if name.ends_with("-ways.json") {
                ways.extend(read_json::<Vec<SweepEntry>>(&path)?);
            }
        }
    }
    if reports.is_empty() && shots.is_empty() && ways.is_empty() {
        return Err(invalid(format!(
            "no evaluation or sweep reports under {}",
            dir.display()
        )));
    }
    let out = dir.join("report");
    let mut files: Vec<(&str, String)> = Vec::new();
    if !reports.is_empty() {
        let table = ResultsTable::from_reports(&reports);
        let mut text = table.to_text();
        if let Err(e) = table.ranks() {
            text.push_str(&format!("\naverage rank unavailable: {e}\n"));
        }
        files.push(("results.txt", text));
        files.push(("results.csv", table.to_csv()));
    }
    if !shots.is_empty() {
        files.push(("shots.dat", shot_plot_data(&shots)));
    }
    if !ways.is_empty() {
        files.push(("ways.dat", way_plot_data(&ways)));
    }
    for (name, text) in &files {
        write_atomic(&out.join(name), text.as_bytes())?;
    }
    println!(
        "report: {} reports from {} runs -> {}",
        reports.len() + shots.len() + ways.len(),
        runs.len(),
        out.display()
    );
    Ok(())
}
