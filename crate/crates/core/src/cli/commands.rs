use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use rayon::prelude::*;
use serde::Serialize;

use super::{invalid, require_file, runtime, CliError, Command, Context, ResultExt, TrainOverrides};
use crate::corpus::{parse_manifest, write_manifest, Task, Utterance};
use crate::dsp::{estimate_f0_with, melspectrogram, read_wav, F0Config, FrameGrid, MelConfig};
use crate::features::synth::{synth_corpus, Plant, SynthConfig};
use crate::features::{resolve_path, write_features, StreamConfig};
use crate::metrics::{self, ScoreReport};
use crate::net::{self, Checkpoint, EvalRow, LossRow, Sample, TrainConfig};

pub(super) fn dispatch(cmd: &Command, ctx: &mut Context) -> Result<(), CliError> {
    match cmd {
        Command::Extract(a) => extract(ctx, a.manifest.as_deref(), &a.streams),
        Command::Train(a) => {
            let mut streams = ctx.config.streams.clone();
            if let Some(s) = &a.acoustic {
                streams.acoustic = s.clone();
            }
            if let Some(s) = &a.linguistic {
                streams.linguistic = s.clone();
            }
            apply_overrides(&mut ctx.config.train, &a.overrides);
            ctx.config.streams = streams;
            let train_path = pick(&a.train, &ctx.config.manifests.train, "train manifest")?;
            let dev_path = a.dev.clone().or_else(|| ctx.config.manifests.dev.clone());
            let out = ctx.out.clone();
            let streams = ctx.config.streams.clone();
            let outcome = train_run(ctx, &streams, &train_path, dev_path.as_deref(), &out)?;
            ctx.set_summary(outcome);
            Ok(())
        }
        Command::Annotate(a) => {
            let manifest = pick(&a.manifest, &ctx.config.manifests.eval, "manifest")?;
            require_file(&a.checkpoint, "checkpoint")?;
            require_file(&manifest, "manifest")?;
            let ckpt = Checkpoint::load(&a.checkpoint).invalid()?;
            let out = ctx.out.clone();
            let path = annotate_run(ctx, &ckpt, &manifest, &out)?;
            ctx.set_summary(serde_json::json!({ "hypothesis": path }));
            Ok(())
        }
        Command::Score(a) => {
            if let Some(p) = a.zero_support {
                ctx.config.score.zero_support = p;
            }
            let reference = pick(&a.reference, &ctx.config.manifests.eval, "reference manifest")?;
            let out = ctx.out.clone();
            let report = score_run(ctx, &reference, &a.hypothesis, &out)?;
            ctx.set_summary(report);
            Ok(())
        }
        Command::Weights(a) => {
            require_file(&a.checkpoint, "checkpoint")?;
            let ckpt = Checkpoint::load(&a.checkpoint).invalid()?;
            let weights = metrics::report_layer_weights(&ckpt);
            let out = ctx.out.clone();
            for p in metrics::write_layer_weights(&out, &weights).runtime()? {
                ctx.record(p);
            }
            for (name, w) in weights.streams() {
                println!("{name}: argmax layer {} of {}", metrics::argmax_layer(w), w.len());
            }
            ctx.set_summary(weights);
            Ok(())
        }
        Command::Synth(a) => {
            let s = &mut ctx.config.synth;
            if let Some(n) = a.train_utts {
                s.train_utts = n;
            }
            if let Some(n) = a.dev_utts {
                s.dev_utts = n;
            }
            if let Some(n) = a.eval_utts {
                s.eval_utts = n;
            }
            if let Some(x) = a.noise {
                s.corpus.noise = x;
            }
            if let Some(x) = a.amplitude {
                s.amplitude = x;
            }
            if a.audio {
                s.corpus.render_audio = true;
            }
            synth(ctx)
        }
        Command::Grid(a) => {
            if !a.acoustic.is_empty() {
                ctx.config.grid.acoustic = a.acoustic.clone();
            }
            if !a.linguistic.is_empty() {
                ctx.config.grid.linguistic = a.linguistic.clone();
            }
            apply_overrides(&mut ctx.config.train, &a.overrides);
            let m = &ctx.config.manifests;
            let train = pick(&a.train, &m.train, "train manifest")?;
            let eval = pick(&a.eval, &m.eval, "eval manifest")?;
            let dev = a.dev.clone().or_else(|| m.dev.clone());
            grid(ctx, &train, dev.as_deref(), &eval)
        }
    }
}

fn pick(flag: &Option<PathBuf>, cfg: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| cfg.clone())
        .ok_or_else(|| invalid(format!("no {what} given")))
}

fn apply_overrides(t: &mut TrainConfig, o: &TrainOverrides) {
    if let Some(x) = o.lr {
        t.lr = x;
    }
    if let Some(x) = o.max_steps {
        t.max_steps = x;
    }
    if let Some(x) = o.batch_size {
        t.batch_size = x;
    }
    if let Some(x) = o.eval_every {
        t.eval_every = x;
    }
    if o.patience.is_some() {
        t.patience = o.patience;
    }
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn absolute(base: &Path, rel: &str) -> String {
    let p = resolve_path(base, rel);
    std::path::absolute(&p).unwrap_or(p).display().to_string()
}

/// Rewrites every file reference as an absolute path so the utterance can be
/// written into a manifest in another directory.
fn rebase(u: &Utterance, base: &Path) -> Utterance {
    let mut u = u.clone();
    u.audio = u.audio.as_deref().map(|a| absolute(base, a));
    u.features = u.features.iter().map(|(k, v)| (k.clone(), absolute(base, v))).collect();
    u
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .runtime()
}

fn load_manifest(ctx: &Context, path: &Path, what: &str) -> Result<Vec<Utterance>, CliError> {
    require_file(path, what)?;
    parse_manifest(path, &ctx.inventory)
        .with_context(|| format!("{what} {}", path.display()))
        .invalid()
}

#[derive(Serialize)]
struct ExtractFailure {
    id: String,
    error: String,
}

fn extract(ctx: &mut Context, manifest: Option<&Path>, streams: &[String]) -> Result<(), CliError> {
    if !streams.is_empty() {
        ctx.config.extract.streams = streams.to_vec();
    }
    let manifest = match manifest {
        Some(p) => p.to_path_buf(),
        None => pick(&None, &ctx.config.manifests.train, "manifest")?,
    };
    let cfg = ctx.config.extract.clone();
    if cfg.streams.is_empty() {
        return Err(invalid("no streams requested"));
    }
    for s in &cfg.streams {
        if s != "melspec" && s != "f0" {
            return Err(invalid(format!("unknown native stream {s:?} (expected melspec or f0)")));
        }
    }
    let utts = load_manifest(ctx, &manifest, "manifest")?;
    let base = manifest_dir(&manifest);
    for u in &utts {
        let audio = u
            .audio
            .as_deref()
            .ok_or_else(|| invalid(format!("utterance {:?} has no audio path", u.id)))?;
        require_file(&resolve_path(&base, audio), "audio file")?;
    }
    let out = ctx.out.clone();
    create_dir(&out.join("feats"))?;

    let results: Vec<Result<(Utterance, Vec<PathBuf>), ExtractFailure>> = utts
        .par_iter()
        .map(|u| {
            extract_one(u, &base, &out, &cfg).map_err(|e| ExtractFailure {
                id: u.id.clone(),
                error: format!("{e:#}"),
            })
        })
        .collect();
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok((u, files)) => {
                files.into_iter().for_each(|f| ctx.record(f));
                done.push(u);
            }
            Err(f) => failures.push(f),
        }
    }
    let out_manifest = out.join("manifest.jsonl");
    write_manifest(&out_manifest, &done).runtime()?;
    ctx.record(&out_manifest);
    ctx.set_summary(serde_json::json!({
        "utterances": utts.len(),
        "extracted": done.len(),
        "failures": &failures,
    }));
    if failures.is_empty() {
        Ok(())
    } else {
        for f in &failures {
            eprintln!("extract {}: {}", f.id, f.error);
        }
        Err(runtime(format!("{} of {} utterances failed", failures.len(), utts.len())))
    }
}

fn extract_one(
    u: &Utterance,
    base: &Path,
    out: &Path,
    cfg: &super::ExtractConfig,
) -> anyhow::Result<(Utterance, Vec<PathBuf>)> {
    let audio = resolve_path(base, u.audio.as_deref().unwrap_or_default());
    let wav = read_wav(&audio)?;
    let grid = FrameGrid::canonical(wav.sample_rate());
    let mut rebased = rebase(u, base);
    let mut files = Vec::new();
    for stream in &cfg.streams {
        let tensor = match stream.as_str() {
            "melspec" => {
                let mel = MelConfig {
                    n_mels: cfg.n_mels,
                    fmin: cfg.fmin,
                    fmax: cfg.fmax.unwrap_or(wav.sample_rate() as f64 / 2.0),
                };
                melspectrogram(&wav, grid, &mel)?
            }
            _ => {
                let f0 = F0Config {
                    floor: cfg.f0_floor,
                    ceil: cfg.f0_ceil,
                    ..F0Config::default()
                };
                estimate_f0_with(&wav, grid, &f0)?
            }
        };
        let rel = format!("feats/{}.{stream}.pfe", u.id);
        let path = out.join(&rel);
        write_features(&tensor, &path)?;
        rebased.features.insert(stream.clone(), rel);
        files.push(path);
    }
    Ok((rebased, files))
}

#[derive(Serialize)]
struct TrainSummary {
    steps: u64,
    best_step: u64,
    final_loss: Option<f64>,
    dev: Option<EvalRow>,
    config_hash: String,
}

fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<(), CliError> {
    let mut s = String::from(LossRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    std::fs::write(path, s).with_context(|| path.display().to_string()).runtime()
}

fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<(), CliError> {
    let mut s = String::from("step,acc,hl,bi,pau\n");
    for r in rows {
        let [a, h, b, p] = r.accuracy;
        writeln!(s, "{},{a},{h},{b},{p}", r.step).unwrap();
    }
    std::fs::write(path, s).with_context(|| path.display().to_string()).runtime()
}

fn load_set(
    ctx: &Context,
    path: &Path,
    streams: &StreamConfig,
    require_labels: bool,
    what: &str,
) -> Result<(Vec<Utterance>, Vec<Sample>), CliError> {
    let utts = load_manifest(ctx, path, what)?;
    let samples = net::load_samples(&utts, streams, &manifest_dir(path), &ctx.inventory, require_labels)
        .with_context(|| format!("{what} {}", path.display()))
        .invalid()?;
    Ok((utts, samples))
}

/// Trains into `out`: `checkpoint.plck` (best on dev, else last),
/// `last.plck`, `loss.csv` and `dev.csv`.
fn train_run(
    ctx: &mut Context,
    streams: &StreamConfig,
    train_path: &Path,
    dev_path: Option<&Path>,
    out: &Path,
) -> Result<TrainSummary, CliError> {
    streams.validate().invalid()?;
    ctx.config.train.validate().invalid()?;
    if let Some(p) = dev_path {
        require_file(p, "dev manifest")?;
    }
    let (_, train_set) = load_set(ctx, train_path, streams, true, "train manifest")?;
    let dev_set = match dev_path {
        Some(p) => load_set(ctx, p, streams, true, "dev manifest")?.1,
        None => Vec::new(),
    };
    let start = Checkpoint::for_samples(&train_set, streams.clone(), ctx.config.model, ctx.config.train.clone())
        .invalid()?;
    create_dir(out)?;

    let loss_path = out.join("loss.csv");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&loss_path)
            .with_context(|| loss_path.display().to_string())
            .runtime()?,
    );
    writeln!(log, "{}", LossRow::CSV_HEADER).runtime()?;
    ctx.record(&loss_path);
    let mut io_error = None;
    let result = net::train(start, &train_set, &dev_set, |row| {
        if io_error.is_none() {
            if let Err(e) = writeln!(log, "{}", row.csv()) {
                io_error = Some(e);
            }
        }
    });
    log.flush().runtime()?;
    drop(log);
    if let Some(e) = io_error {
        return Err(e).runtime();
    }
    let outcome = result.runtime()?;
    // Rewrite from the recorded rows so the log is complete even if a write
    // was buffered when the run ended.
    write_loss_csv(&loss_path, &outcome.losses)?;
    let dev_csv = out.join("dev.csv");
    write_eval_csv(&dev_csv, &outcome.evals)?;
    ctx.record(&dev_csv);
    let last = out.join("last.plck");
    outcome.last.save(&last).runtime()?;
    ctx.record(&last);
    let best = out.join("checkpoint.plck");
    outcome.best.save(&best).runtime()?;
    ctx.record(&best);
    let dev = outcome.evals.iter().find(|e| e.step == outcome.best.step).copied();
    Ok(TrainSummary {
        steps: outcome.last.step,
        best_step: outcome.best.step,
        final_loss: outcome.losses.last().map(|r| r.total),
        dev,
        config_hash: outcome.best.config_hash(),
    })
}

/// Labels every utterance in `manifest` and writes `out/hyp.jsonl`.
fn annotate_run(ctx: &mut Context, ckpt: &Checkpoint, manifest: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let (utts, samples) = load_set(ctx, manifest, &ckpt.streams, false, "manifest")?;
    let base = manifest_dir(manifest);
    let hyps: Vec<Utterance> = utts
        .iter()
        .zip(&samples)
        .map(|(u, s)| {
            let input = ckpt.model.prepare(&s.layers).invalid()?;
            let labels = net::annotate(&ckpt.model, &input, &s.mask).runtime()?;
            let mut h = rebase(u, &base);
            h.labels = Some(labels);
            Ok(h)
        })
        .collect::<Result<_, CliError>>()?;
    create_dir(out)?;
    let path = out.join("hyp.jsonl");
    write_manifest(&path, &hyps).runtime()?;
    ctx.record(&path);
    Ok(path)
}

fn score_run(ctx: &mut Context, reference: &Path, hypothesis: &Path, out: &Path) -> Result<ScoreReport, CliError> {
    let refs = load_manifest(ctx, reference, "reference manifest")?;
    let hyps = load_manifest(ctx, hypothesis, "hypothesis manifest")?;
    let (report, matrices) = metrics::score(&refs, &hyps, ctx.config.score.zero_support).invalid()?;
    metrics::write_scores(out, &report, &matrices).runtime()?;
    ctx.record(out.join("scores.json"));
    for t in Task::ALL {
        ctx.record(out.join(format!("confusion_{}.csv", t.name())));
    }
    Ok(report)
}

fn synth(ctx: &mut Context) -> Result<(), CliError> {
    let s = ctx.config.synth.clone();
    let plant = Plant::orthogonal(s.corpus.acoustic_dim, s.amplitude).invalid()?;
    let splits = [("train", s.train_utts, 0u64), ("dev", s.dev_utts, 1), ("eval", s.eval_utts, 2)];
    if splits.iter().all(|(_, n, _)| *n == 0) {
        return Err(invalid("every split is empty"));
    }
    let out = ctx.out.clone();
    let mut counts = BTreeMap::new();
    let mut corpora = Vec::new();
    // Generate everything first so a bad config fails before anything is written.
    for (name, n, offset) in splits {
        if n == 0 {
            continue;
        }
        let cfg = SynthConfig {
            n_utts: n,
            seed: s.corpus.seed.wrapping_add(offset),
            id_prefix: format!("{}-{name}", s.corpus.id_prefix),
            ..s.corpus.clone()
        };
        corpora.push((name, synth_corpus(&cfg, &plant, &ctx.inventory).invalid()?));
        counts.insert(name, n);
    }
    create_dir(&out)?;
    for (name, corpus) in corpora {
        let file = format!("{name}.jsonl");
        let written = corpus.write(&out, &file, s.corpus.sample_rate).runtime()?;
        for u in &written {
            u.features.values().chain(u.audio.iter()).for_each(|p| ctx.record(out.join(p)));
        }
        ctx.record(out.join(file));
    }
    let plant_path = out.join("plant.json");
    std::fs::write(&plant_path, serde_json::to_string_pretty(&plant).expect("plant serializes") + "\n")
        .runtime()?;
    ctx.record(&plant_path);
    ctx.set_summary(serde_json::json!({
        "splits": counts,
        "signal_layer": s.corpus.signal_layer,
        "linguistic_signal_layer": s.corpus.linguistic_signal_layer,
    }));
    Ok(())
}

#[derive(Serialize)]
struct GridRow {
    acoustic: String,
    linguistic: String,
    accuracy: [f64; 4],
    macro_f1: [f64; 4],
}

pub const GRID_HEADER: &str = "acoustic,linguistic,acc,hl,bi,pau,acc_f1,hl_f1,bi_f1,pau_f1";

fn grid(ctx: &mut Context, train: &Path, dev: Option<&Path>, eval: &Path) -> Result<(), CliError> {
    let combos = ctx.config.grid.combinations();
    if combos.is_empty() {
        return Err(invalid("the grid has no valid stream combination"));
    }
    ctx.config.train.validate().invalid()?;
    require_file(train, "train manifest")?;
    require_file(eval, "eval manifest")?;
    if let Some(d) = dev {
        require_file(d, "dev manifest")?;
    }
    // Check every combination can load its inputs before training any of them.
    for s in &combos {
        load_set(ctx, train, s, true, "train manifest")?;
        load_set(ctx, eval, s, true, "eval manifest")?;
    }
    let out = ctx.out.clone();
    create_dir(&out)?;
    let summary_path = out.join("grid_summary.csv");
    let mut rows = Vec::new();
    let mut csv = String::from(GRID_HEADER);
    csv.push('\n');
    for s in &combos {
        let dir = out.join(format!("{}__{}", s.acoustic, s.linguistic));
        eprintln!("grid: {} x {}", s.acoustic, s.linguistic);
        train_run(ctx, s, train, dev, &dir)?;
        let ckpt = Checkpoint::load(dir.join("checkpoint.plck")).runtime()?;
        let hyp = annotate_run(ctx, &ckpt, eval, &dir)?;
        let report = score_run(ctx, eval, &hyp, &dir)?;
        let row = GridRow {
            acoustic: s.acoustic.to_string(),
            linguistic: s.linguistic.to_string(),
            accuracy: report.accuracies(),
            macro_f1: Task::ALL.map(|t| report.task(t).macro_f1),
        };
        let [a, h, b, p] = row.accuracy;
        let [fa, fh, fb, fp] = row.macro_f1;
        writeln!(csv, "{},{},{a},{h},{b},{p},{fa},{fh},{fb},{fp}", row.acoustic, row.linguistic).unwrap();
        // Keep the summary current so an interrupted grid still shows its finished rows.
        std::fs::write(&summary_path, &csv).runtime()?;
        rows.push(row);
    }
    ctx.record(&summary_path);
    ctx.set_summary(rows);
    Ok(())
}
