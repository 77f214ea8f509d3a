use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};

use histosynth::eval::{evaluate_model, EvalItem, Segmenter};
use histosynth::imageops::{Raster, RgbImage};
use histosynth::phantom::{phantom_corpus, PhantomStyle};
use histosynth::store::io::write_rgb_png;
use histosynth::store::{
    generate_samples, ingest, GroupingRule, Manifest, SampleKind, SampleStore, MANIFEST_FILE,
};
use histosynth::synth::{RealPatch, SynthSample, SynthesisParams};
use histosynth::trainer::{
    load_checkpoint, save_checkpoint, write_metrics_csv, DataConfig, RunConfig, TrainCorpus,
    TrainSample, TrainState,
};
use histosynth::Error;

use crate::{EvalArgs, Failure, GenerateArgs, PhantomArgs, ServeArgs, TrainArgs};

type CmdResult = Result<(), Failure>;

/// Samples synthesized in parallel before being written in index order.
const WINDOW: usize = 64;

fn context(what: impl std::fmt::Display) -> impl FnOnce(Error) -> Failure {
    move |e| {
        let f = Failure::from(e);
        Failure {
            code: f.code,
            message: format!("{what}: {}", f.message),
        }
    }
}

/// Real patches from a store manifest, or ingested from style folders.
pub fn load_real(dir: &Path) -> Result<Vec<RealPatch>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::usage(format!(
            "real patch directory {} does not exist",
            dir.display()
        )));
    }
    let real = if dir.join(MANIFEST_FILE).is_file() {
        let m = Manifest::load(dir).map_err(context(dir.display()))?;
        let groups: Vec<_> = m
            .style_groups()
            .into_iter()
            .filter(|g| g.is_valid())
            .collect();
        m.load_real(&groups)
    } else {
        let ing = ingest(dir, GroupingRule::ParentDir, None).map_err(context(dir.display()))?;
        for w in &ing.warnings {
            tracing::warn!("{w:?}");
        }
        ing.manifest.load_real(&ing.groups)
    }
    .map_err(context(dir.display()))?;
    if real.is_empty() {
        return Err(Failure::runtime(format!(
            "no style group with at least two readable patches under {}",
            dir.display()
        )));
    }
    Ok(real)
}

fn load_params(path: &Path) -> Result<SynthesisParams, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let params: SynthesisParams = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
    };
    params.validate().map_err(context(path.display()))?;
    Ok(params)
}

fn sample_id(seed: u64) -> String {
    format!("syn_{seed:010}")
}

pub fn generate(a: &GenerateArgs) -> CmdResult {
    let params = load_params(&a.params)?;
    let mut store = SampleStore::open(&a.out).map_err(context(a.out.display()))?;
    store.manifest().save().map_err(context(a.out.display()))?;
    if a.count == 0 {
        println!("wrote 0 samples to {}", a.out.display());
        return Ok(());
    }
    let real = load_real(&a.real_dir)?;
    let workers = (a.workers as usize).min(WINDOW);
    let style = a.style.as_deref();
    let mut failures: Vec<String> = Vec::new();
    let mut written = 0usize;
    for start in (0..a.count).step_by(WINDOW) {
        let end = (start + WINDOW).min(a.count);
        let indices: Vec<usize> = (start..end).collect();
        let chunk = indices.len().div_ceil(workers);
        let mut results: Vec<(usize, histosynth::Result<SynthSample>)> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = indices
                    .chunks(chunk)
                    .map(|idx| {
                        let (real, params) = (&real, &params);
                        scope.spawn(move || {
                            idx.iter()
                                .map(|&i| {
                                    let seed = a.seed.wrapping_add(i as u64);
                                    let one = generate_samples(real, params, 1, seed, style)
                                        .map(|mut v| v.remove(0));
                                    (i, one)
                                })
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("generation worker panicked"))
                    .collect()
            });
        results.sort_by_key(|(i, _)| *i);
        for (i, r) in results {
            let seed = a.seed.wrapping_add(i as u64);
            let outcome =
                r.and_then(|s| store.write_sample(&sample_id(seed), SampleKind::Initial, &s));
            match outcome {
                Ok(_) => written += 1,
                Err(e) => failures.push(format!("sample {i} (seed {seed}): {e}")),
            }
        }
    }
    println!("wrote {written} samples to {}", a.out.display());
    if failures.is_empty() {
        return Ok(());
    }
    for f in failures.iter().take(10) {
        eprintln!("  {f}");
    }
    if failures.len() > 10 {
        eprintln!("  ... and {} more", failures.len() - 10);
    }
    Err(Failure::runtime(format!(
        "{} of {} samples failed",
        failures.len(),
        a.count
    )))
}

fn phantom_real(cfg: &RunConfig) -> histosynth::Result<Vec<RealPatch>> {
    let size = (2 * cfg.synthesis.patch_size).max(96);
    let mut real = Vec::new();
    for (k, style) in PhantomStyle::palette().iter().take(2).enumerate() {
        real.extend(phantom_corpus(
            style,
            8,
            size,
            cfg.seed.wrapping_add(1000 * k as u64),
        )?);
    }
    Ok(real)
}

fn build_corpus(cfg: &RunConfig, data: &DataConfig) -> Result<TrainCorpus, Failure> {
    let real = match &data.real_dir {
        Some(dir) => load_real(dir)?,
        None => {
            tracing::warn!("no data.real_dir configured; training on procedural phantom patches");
            phantom_real(cfg)?
        }
    };
    let samples: Vec<TrainSample> = match &data.synth_dir {
        Some(dir) => {
            let store = SampleStore::open(dir).map_err(context(dir.display()))?;
            let ids: Vec<String> = store
                .manifest()
                .records()
                .iter()
                .filter(|r| r.kind == SampleKind::Initial)
                .map(|r| r.id.clone())
                .collect();
            ids.iter()
                .map(|id| {
                    let s = store.read_sample(id)?;
                    Ok(TrainSample {
                        image: s.image,
                        mask: s.gt_mask,
                        style_id: s.record.style_id,
                        label: None,
                    })
                })
                .collect::<histosynth::Result<_>>()
                .map_err(context(dir.display()))?
        }
        None => {
            tracing::info!(samples = cfg.samples, "generating initial samples");
            generate_samples(&real, &cfg.synthesis, cfg.samples, cfg.seed, None)?
                .iter()
                .map(TrainSample::from)
                .collect()
        }
    };
    Ok(TrainCorpus::new(samples, &real)?)
}

pub fn train(a: &TrainArgs) -> CmdResult {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", a.config.display())))?;
    let mut cfg = RunConfig::from_toml_str(&text).map_err(context(a.config.display()))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(every) = a.checkpoint_every {
        cfg.checkpoint_every = every;
    }
    if let Some(dir) = &a.real_dir {
        cfg.data.real_dir = Some(dir.clone());
    }
    cfg.validate().map_err(context(a.config.display()))?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let data = cfg.data.resolved(base);

    let mut state = match &a.resume {
        Some(path) => {
            let st = load_checkpoint(path).map_err(context(path.display()))?;
            if st.config != cfg.train_config() {
                return Err(Failure::usage(format!(
                    "{} was written by a run with a different training configuration",
                    path.display()
                )));
            }
            tracing::info!(cursor = st.cursor, "resuming");
            st
        }
        None => TrainState::new(cfg.train_config())?,
    };

    let ckpt_dir = a.out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)
        .map_err(|e| Failure::runtime(format!("{}: {e}", ckpt_dir.display())))?;
    std::fs::write(a.out.join("config.toml"), cfg.to_toml_string()?)
        .map_err(|e| Failure::runtime(format!("{}: {e}", a.out.display())))?;

    let total = state.events().len();
    if state.cursor < total {
        let corpus = build_corpus(&cfg, &data)?;
        tracing::info!(
            samples = corpus.len(),
            patch = corpus.patch_size(),
            updates = total,
            "training"
        );
        let every = cfg.checkpoint_every;
        let mut save_error: Option<Error> = None;
        let run = state.run(&corpus, None, &mut |st| {
            if every > 0 && st.cursor % every == 0 && save_error.is_none() {
                let path = ckpt_dir.join(format!("step_{:07}.ckpt", st.cursor));
                if let Err(e) = save_checkpoint(st, &path) {
                    save_error = Some(e);
                }
            }
            if st.cursor % 100 == 0 {
                tracing::info!(
                    step = st.cursor,
                    total,
                    stage = st.stage.as_str(),
                    "progress"
                );
            }
        });
        // keep what was learned even if a step failed
        write_metrics_csv(&state.history, &a.out.join("metrics.csv"))?;
        if let Err(e) = run {
            let path = ckpt_dir.join(format!("failed_{:07}.ckpt", state.cursor));
            let _ = save_checkpoint(&state, &path);
            return Err(Failure::runtime(format!(
                "training stopped at update {}: {e}",
                state.cursor
            )));
        }
        if let Some(e) = save_error {
            return Err(Failure::runtime(format!("checkpoint save failed: {e}")));
        }
    }
    let final_path = a.out.join("final.ckpt");
    save_checkpoint(&state, &final_path)?;
    write_metrics_csv(&state.history, &a.out.join("metrics.csv"))?;
    println!(
        "finished {} updates (G {}, D {}, R {}); checkpoint {}",
        state.cursor,
        state.counts.g,
        state.counts.d,
        state.counts.r,
        final_path.display()
    );
    Ok(())
}

fn image_key(img: &RgbImage) -> u64 {
    let mut h = DefaultHasher::new();
    img.shape().hash(&mut h);
    for v in img.data() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Answers every image with its own ground truth.
struct GroundTruthReplay(HashMap<u64, Raster>);

impl Segmenter for GroundTruthReplay {
    fn probability_map(&self, image: &RgbImage) -> histosynth::Result<Raster> {
        self.0
            .get(&image_key(image))
            .cloned()
            .ok_or_else(|| Error::Invalid("image is not part of the replayed corpus".into()))
    }
}

fn load_eval_items(dir: &Path) -> Result<Vec<EvalItem>, Failure> {
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(Failure::usage(format!(
            "{} has no {MANIFEST_FILE}",
            dir.display()
        )));
    }
    let store = SampleStore::open(dir).map_err(context(dir.display()))?;
    let ids: Vec<String> = store
        .manifest()
        .records()
        .iter()
        .filter(|r| r.mask.is_some())
        .map(|r| r.id.clone())
        .collect();
    ids.iter()
        .map(|id| store.read_sample(id).map(EvalItem::from))
        .collect::<histosynth::Result<_>>()
        .map_err(context(dir.display()))
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Failure::usage("--threshold must be in [0, 1]"));
    }
    let items = load_eval_items(&a.corpus)?;
    if items.is_empty() {
        return Err(Failure::runtime(format!(
            "{} has no samples with masks",
            a.corpus.display()
        )));
    }
    let agg = match &a.checkpoint {
        Some(path) => {
            let state = load_checkpoint(path).map_err(context(path.display()))?;
            evaluate_model(&state.task, &items, a.threshold)?
        }
        None => {
            let replay = GroundTruthReplay(
                items
                    .iter()
                    .map(|it| (image_key(&it.image), it.gt.to_raster()))
                    .collect(),
            );
            evaluate_model(&replay, &items, a.threshold)?
        }
    };
    write_report(&a.report, &agg.per_image).map_err(context(a.report.display()))?;
    println!(
        "{} images: pixel DICE {:.4}, object DICE {:.4}, average {:.4}",
        agg.per_image.len(),
        agg.mean.pixel_dice,
        agg.mean.object_dice,
        agg.mean.dice_avg
    );
    Ok(())
}

fn write_report(path: &PathBuf, rows: &[histosynth::eval::ImageDice]) -> histosynth::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "pixel_dice", "object_dice", "dice_avg"])?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.report.pixel_dice.to_string(),
            r.report.object_dice.to_string(),
            r.report.dice_avg.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn serve(a: &ServeArgs) -> CmdResult {
    let mut options = histosynth_service::ServiceOptions::default();
    if let Some(w) = a.workers {
        if w == 0 {
            return Err(Failure::usage("--workers must be at least 1"));
        }
        options.workers = w;
        options.queue = 4 * w;
    }
    if let Some(q) = a.queue {
        options.queue = q;
    }
    options.data_dir = a
        .data_dir
        .clone()
        .or_else(|| a.corpus.as_ref().map(|c| c.join("service")));
    let config = histosynth_service::ServeConfig {
        addr: a.addr(),
        corpus: a.corpus.clone(),
        checkpoint: a.checkpoint.clone(),
        options,
    };
    let rt = tokio::runtime::Runtime::new()
        .map_err(|e| Failure::runtime(format!("cannot start runtime: {e}")))?;
    rt.block_on(histosynth_service::serve(config))
        .map_err(|e| Failure::runtime(e.to_string()))
}

pub fn phantom(a: &PhantomArgs) -> CmdResult {
    let palette = PhantomStyle::palette();
    if a.styles == 0 || a.styles > palette.len() {
        return Err(Failure::usage(format!(
            "--styles must be between 1 and {}",
            palette.len()
        )));
    }
    if a.size < 16 {
        return Err(Failure::usage("--size must be at least 16"));
    }
    for (k, style) in palette.iter().take(a.styles).enumerate() {
        let patches = phantom_corpus(
            style,
            a.per_style,
            a.size,
            a.seed.wrapping_add(1000 * k as u64),
        )?;
        for p in &patches {
            write_rgb_png(
                &a.out.join(&p.style_id).join(format!("{}.png", p.id)),
                &p.image,
            )?;
        }
    }
    println!(
        "wrote {} styles x {} patches to {}",
        a.styles,
        a.per_style,
        a.out.display()
    );
    Ok(())
}
