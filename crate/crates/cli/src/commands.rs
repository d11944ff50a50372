//! Subcommand implementations. Every failure maps to one exit code.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aefuse::fusion::{FusionMethodId, FusionOperator};
use aefuse::image::{encode_pgm, load_pgm, save_pgm};
use aefuse::learner::{net_load, net_store, train, FusionNet, LossMode, TrainSample};
use aefuse::metrics::{niqe_fit, Evaluator, MetricPanel, NssModel, PairPanel};
use aefuse::oracle::{cache_load_expecting, cache_store, OracleCache, OracleError};
use aefuse::{synthetic, GrayImage, ImagePair};

use crate::config::{parse_config, OracleEvaluator, RunConfig};
use crate::manifest::{load_manifest, render_manifest, ManifestRow};
use crate::{Cli, CliError, Command};

pub const CANDIDATES_DIR: &str = "candidates";
pub const MODEL_FILE: &str = "model.aenet";
pub const INIT_MODEL_FILE: &str = "model.init.aenet";
pub const SCORES_HEADER: &str = "pair_id,method,EN,AG,SSIM,VIF,NIQE,PSNR,MI,E2,selected";
pub const SOURCE_SCORES_HEADER: &str = "pair_id,method,source,SSIM,VIF,PSNR,MI,E2";
pub const BENCH_HEADER: &str = "method,EN,AG,SSIM,VIF,NIQE,PSNR,MI,E2,time_s";

fn usage(msg: impl Into<String>) -> CliError {
    CliError::new(CliError::USAGE, msg)
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new(CliError::IO, format!("{}: {e}", path.display()))
}

fn eval_err(e: impl std::fmt::Display) -> CliError {
    CliError::new(CliError::EVALUATION, e.to_string())
}

/// Resolved settings shared by every command.
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    manifest: PathBuf,
}

impl Context {
    pub fn cache_dir(&self) -> PathBuf {
        self.cfg
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.out.join("cache"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.cfg
            .report_dir
            .clone()
            .unwrap_or_else(|| self.out.clone())
    }

    fn rows(&self) -> Result<Vec<ManifestRow>, CliError> {
        load_manifest(&self.manifest).map_err(|e| usage(e.to_string()))
    }

    fn load_pairs(&self) -> Result<Vec<ImagePair>, CliError> {
        self.rows()?
            .iter()
            .map(|r| r.load().map_err(|e| usage(e.to_string())))
            .collect()
    }

    fn nss_model(&self) -> Result<NssModel, CliError> {
        match &self.cfg.nss_path {
            Some(p) => NssModel::load(p).map_err(|e| usage(format!("NSS model: {e}"))),
            None => Ok(synthetic::default_nss_model()),
        }
    }

    fn evaluators(&self) -> Result<(Evaluator, NssModel), CliError> {
        let model = self.nss_model()?;
        let ev = match self.cfg.evaluator {
            OracleEvaluator::CrossModal => {
                Evaluator::crossmodal(self.cfg.weights.clone(), model.clone())
            }
            OracleEvaluator::Supervised => Evaluator::supervised(self.cfg.weights.clone()),
        };
        Ok((ev, model))
    }

    fn load_cache(&self, ev: &Evaluator) -> Result<OracleCache, CliError> {
        let dir = self.cache_dir();
        if !dir.join(aefuse::oracle::INDEX_FILE).exists() {
            return Err(CliError::new(
                CliError::MISSING,
                format!("no oracle cache in {}; run `oracle` first", dir.display()),
            ));
        }
        cache_load_expecting(&dir, &ev.tag()).map_err(|e| match e {
            OracleError::TagMismatch { .. } => CliError::new(CliError::STALE, e.to_string()),
            OracleError::Io(..) => CliError::new(CliError::IO, e.to_string()),
            _ => CliError::new(CliError::MISSING, e.to_string()),
        })
    }
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            parse_config(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    let ctx = Context {
        manifest: cli
            .manifest
            .clone()
            .unwrap_or_else(|| cli.out.join("manifest.csv")),
        out: cli.out.clone(),
        cfg,
    };
    fs::create_dir_all(&ctx.out).map_err(|e| io(&ctx.out, e))?;
    match cli.command {
        Command::Fuse => cmd_fuse(&ctx),
        Command::Oracle => cmd_oracle(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Evolve { method } => cmd_evolve(&ctx, &method),
        Command::Bench { model } => cmd_bench(&ctx, model),
        Command::GenSynthetic { count, size } => cmd_gen_synthetic(&ctx, count, size),
        Command::FitNss {
            images,
            output,
            count,
            size,
        } => cmd_fit_nss(&ctx, images, output, count, size),
    }
}

fn csv_text(header: &str, rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header.split(',')).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io(path, e))
}

/// Shortest round-trip representation, so reports can be recomputed exactly.
fn exact(v: f64) -> String {
    format!("{v}")
}

/// Fixed-precision rendering shared by the CSV and markdown tables.
fn fixed(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        format!("{v}")
    }
}

fn candidate_path(dir: &Path, pair_id: &str, method: &str) -> PathBuf {
    dir.join(format!("{pair_id}.{method}.pgm"))
}

/// Runs the registry on one pair. Outputs are quantized to 8 bits so that
/// results computed in memory match those read back from disk.
fn fuse_pair(
    ctx: &Context,
    pair: &ImagePair,
) -> Result<Vec<(FusionMethodId, GrayImage)>, CliError> {
    let cands = ctx.cfg.registry().fuse_all(pair).map_err(eval_err)?;
    Ok(cands
        .into_iter()
        .map(|(id, img)| (id, img.quantized()))
        .collect())
}

fn cmd_fuse(ctx: &Context) -> Result<(), CliError> {
    let rows = ctx.rows()?;
    let dir = ctx.out.join(CANDIDATES_DIR);
    fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| {
        for row in &rows {
            let pair = row.load().map_err(|e| usage(e.to_string()))?;
            for (id, img) in fuse_pair(ctx, &pair)? {
                let path = candidate_path(&dir, &pair.id, &id.name);
                save_pgm(&img, &path).map_err(|e| io(&path, e))?;
                written.push(path);
            }
        }
        Ok(())
    })();
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
    }
    result?;
    println!(
        "wrote {} candidates for {} pairs",
        written.len(),
        rows.len()
    );
    Ok(())
}

/// Candidates from `fuse` output when complete, otherwise computed now.
fn candidates_for(
    ctx: &Context,
    pair: &ImagePair,
) -> Result<Vec<(FusionMethodId, GrayImage)>, CliError> {
    let dir = ctx.out.join(CANDIDATES_DIR);
    let reg = ctx.cfg.registry();
    let applicable: Vec<_> = reg
        .entries()
        .iter()
        .filter(|e| e.applies_to(pair.task))
        .collect();
    let paths: Vec<PathBuf> = applicable
        .iter()
        .map(|e| candidate_path(&dir, &pair.id, &e.id.name))
        .collect();
    if !applicable.is_empty() && paths.iter().all(|p| p.is_file()) {
        let mut out = Vec::new();
        for (e, p) in applicable.iter().zip(&paths) {
            let img = load_pgm(p).map_err(|err| io(p, err))?;
            if !img.same_dims(&pair.a) {
                return Err(usage(format!(
                    "pair '{}': stale candidate {}",
                    pair.id,
                    p.display()
                )));
            }
            out.push((e.id.clone(), img));
        }
        return Ok(out);
    }
    fuse_pair(ctx, pair)
}

fn panel_row(pair_id: &str, method: &str, p: &MetricPanel, e2: f64) -> Vec<String> {
    vec![
        pair_id.to_string(),
        method.to_string(),
        exact(p.en),
        exact(p.ag),
        exact(p.ssim),
        exact(p.vif),
        exact(p.niqe),
        exact(p.psnr),
        exact(p.mi),
        exact(e2),
    ]
}

fn cmd_oracle(ctx: &Context) -> Result<(), CliError> {
    let pairs = ctx.load_pairs()?;
    let (ev, model) = ctx.evaluators()?;
    let weights = &ctx.cfg.weights;
    let mut cache = OracleCache::new(ev.tag());
    let mut rows = Vec::new();
    let mut source_rows = Vec::new();
    for pair in &pairs {
        let cands = candidates_for(ctx, pair)?;
        let mut scored = Vec::with_capacity(cands.len());
        let mut pair_rows = Vec::with_capacity(cands.len());
        for (id, img) in cands {
            let panel = PairPanel::compute(&pair.a, &pair.b, &img, &model)
                .map_err(|e| eval_err(format!("pair '{}', method '{}': {e}", pair.id, id.name)))?;
            let e2 = panel.crossmodal(weights);
            let score = match ctx.cfg.evaluator {
                OracleEvaluator::CrossModal => e2,
                OracleEvaluator::Supervised => ev.score(pair, &img).map_err(|e| {
                    eval_err(format!("pair '{}', method '{}': {e}", pair.id, id.name))
                })?,
            };
            pair_rows.push(panel_row(&pair.id, &id.name, &panel.summary(weights), e2));
            for (source, sp) in [("a", &panel.x), ("b", &panel.y)] {
                source_rows.push(vec![
                    pair.id.clone(),
                    id.name.clone(),
                    source.to_string(),
                    exact(sp.ssim),
                    exact(sp.vif),
                    exact(sp.psnr),
                    exact(sp.mi),
                    exact(sp.crossmodal(weights)),
                ]);
            }
            scored.push((id, img, score));
        }
        let best = cache.insert_scored(&pair.id, &scored).map_err(eval_err)?;
        for mut r in pair_rows {
            r.push(if r[1] == best.method.name { "1" } else { "0" }.to_string());
            rows.push(r);
        }
    }
    let dir = ctx.cache_dir();
    cache_store(&cache, &dir).map_err(|e| io(&dir, e))?;
    let report = ctx.report_dir().join("scores.csv");
    write_file(&report, csv_text(SCORES_HEADER, &rows))?;
    write_file(
        &ctx.report_dir().join("scores_by_source.csv"),
        csv_text(SOURCE_SCORES_HEADER, &source_rows),
    )?;
    println!(
        "selected optima for {} pairs ({})",
        cache.len(),
        cache.evaluator_tag()
    );
    Ok(())
}

fn cmd_train(ctx: &Context) -> Result<(), CliError> {
    let pairs = ctx.load_pairs()?;
    let cfg = &ctx.cfg.train;
    let (ev, _) = ctx.evaluators()?;
    let cache = if cfg.loss_mode == LossMode::Unsupervised {
        None
    } else {
        Some(ctx.load_cache(&ev)?)
    };
    let mut samples = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let optimum = match &cache {
            Some(c) => Some(c.get(&pair.id).ok_or_else(|| {
                CliError::new(
                    CliError::MISSING,
                    format!("pair '{}' has no cached optimum", pair.id),
                )
            })?),
            None => None,
        };
        samples.push(TrainSample::new(pair, optimum).map_err(|e| usage(e.to_string()))?);
    }
    let mut net = FusionNet::random(cfg.seed);
    let init_path = ctx.out.join(INIT_MODEL_FILE);
    net_store(&net, &init_path).map_err(|e| io(&init_path, e))?;
    let trace = train(&mut net, &samples, cfg).map_err(|e| usage(e.to_string()))?;
    let model_path = ctx.out.join(MODEL_FILE);
    net_store(&net, &model_path).map_err(|e| io(&model_path, e))?;
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                exact(r.total),
                exact(r.term_supervised),
                exact(r.term_unsupervised),
            ]
        })
        .collect();
    write_file(
        &ctx.report_dir().join("trace.csv"),
        csv_text("epoch,total,sup,unsup", &rows),
    )?;
    match trace.last() {
        Some(r) => println!("final mean loss {:.6} after {} epochs", r.total, r.epoch),
        None => println!("no epochs run"),
    }
    Ok(())
}

fn cmd_evolve(ctx: &Context, method: &str) -> Result<(), CliError> {
    let spec = ctx
        .cfg
        .method(method)
        .cloned()
        .or_else(|| {
            aefuse::fusion::BuiltinOp::from_kind(method)
                .ok()
                .map(|op| crate::config::MethodSpec {
                    name: method.to_string(),
                    op,
                    tasks: Vec::new(),
                })
        })
        .ok_or_else(|| usage(format!("unknown method '{method}'")))?;
    let pairs = ctx.load_pairs()?;
    let (ev, _) = ctx.evaluators()?;
    let mut cache = ctx.load_cache(&ev)?;
    let id = FusionMethodId::new(&spec.name, 1);
    let mut rows = Vec::new();
    let mut replaced = 0;
    let mut evolved = 0;
    for pair in &pairs {
        if cache.get(&pair.id).is_none() {
            return Err(CliError::new(
                CliError::MISSING,
                format!("pair '{}' has no cached optimum", pair.id),
            ));
        }
        let applies = spec.tasks.is_empty()
            || pair.task == aefuse::TaskKind::Unknown
            || spec.tasks.contains(&pair.task);
        if !applies {
            continue;
        }
        let img = spec
            .op
            .fuse(pair)
            .map_err(|e| eval_err(format!("pair '{}': {e}", pair.id)))?
            .quantized();
        let outcome = cache
            .evolve(pair, id.clone(), img, &ev)
            .map_err(|e| match e {
                OracleError::DuplicateMethodForPair { .. } | OracleError::TagMismatch { .. } => {
                    CliError::new(CliError::STALE, e.to_string())
                }
                other => eval_err(other),
            })?;
        evolved += 1;
        replaced += usize::from(outcome.replaced);
        rows.push(vec![
            outcome.pair_id.clone(),
            outcome.previous_method.name.clone(),
            exact(outcome.previous_score),
            exact(outcome.candidate_score),
            exact(outcome.delta()),
            u8::from(outcome.replaced).to_string(),
        ]);
    }
    let dir = ctx.cache_dir();
    cache_store(&cache, &dir).map_err(|e| io(&dir, e))?;
    write_file(
        &ctx.report_dir().join("evolve.csv"),
        csv_text(
            "pair_id,previous_method,previous_score,candidate_score,delta,replaced",
            &rows,
        ),
    )?;
    println!(
        "method '{}' replaced the optimum for {replaced} of {evolved} pairs",
        spec.name
    );
    Ok(())
}

/// Sums of per-pair metric panels for one bench row.
#[derive(Default)]
struct BenchAccumulator {
    sums: [f64; 8],
    seconds: f64,
    pairs: usize,
}

impl BenchAccumulator {
    fn add(&mut self, p: &MetricPanel, e2: f64, seconds: f64) {
        let vals = [p.en, p.ag, p.ssim, p.vif, p.niqe, p.psnr, p.mi, e2];
        for (s, v) in self.sums.iter_mut().zip(vals) {
            *s += v;
        }
        self.seconds += seconds;
        self.pairs += 1;
    }

    fn cells(&self, name: &str) -> Vec<String> {
        let n = self.pairs as f64;
        let mut cells = vec![name.to_string()];
        if self.pairs == 0 {
            cells.extend(std::iter::repeat_n(String::new(), 9));
        } else {
            cells.extend(self.sums.iter().map(|s| fixed(s / n)));
            cells.push(format!("{:.4}", self.seconds / n));
        }
        cells
    }
}

fn cmd_bench(ctx: &Context, model: Option<PathBuf>) -> Result<(), CliError> {
    let model_path = model.unwrap_or_else(|| ctx.out.join(MODEL_FILE));
    if !model_path.is_file() {
        return Err(CliError::new(
            CliError::MISSING,
            format!("no model at {}; run `train` first", model_path.display()),
        ));
    }
    let net = net_load(&model_path).map_err(|e| CliError::new(CliError::MISSING, e.to_string()))?;
    let pairs = ctx.load_pairs()?;
    let (ev, nss) = ctx.evaluators()?;
    let cache = ctx.load_cache(&ev)?;
    let weights = &ctx.cfg.weights;
    let reg = ctx.cfg.registry();
    let mut acc: Vec<BenchAccumulator> = (0..reg.len() + 2)
        .map(|_| BenchAccumulator::default())
        .collect();
    let (oracle_idx, net_idx) = (reg.len(), reg.len() + 1);
    let mut pair_rows = Vec::new();
    let panel = |pair: &ImagePair, img: &GrayImage, who: &str| {
        PairPanel::compute(&pair.a, &pair.b, img, &nss)
            .map(|p| (p.summary(weights), p.crossmodal(weights)))
            .map_err(|e| eval_err(format!("pair '{}', {who}: {e}", pair.id)))
    };
    for pair in &pairs {
        let optimum = cache.get(&pair.id).ok_or_else(|| {
            CliError::new(
                CliError::MISSING,
                format!("pair '{}' has no cached optimum", pair.id),
            )
        })?;
        let mut registry_seconds = 0.0;
        for (k, entry) in reg.entries().iter().enumerate() {
            if !entry.applies_to(pair.task) {
                continue;
            }
            let t = Instant::now();
            let img = entry
                .op
                .fuse(pair)
                .map_err(|e| eval_err(format!("pair '{}': {e}", pair.id)))?
                .quantized();
            let secs = t.elapsed().as_secs_f64();
            registry_seconds += secs;
            let (p, e2) = panel(pair, &img, &entry.id.name)?;
            acc[k].add(&p, e2, secs);
            pair_rows.push(vec![pair.id.clone(), entry.id.name.clone(), exact(e2)]);
        }
        // the oracle needs every registry candidate before it can select
        let (p, e2) = panel(pair, &optimum.fused, "oracle")?;
        acc[oracle_idx].add(&p, e2, registry_seconds);
        pair_rows.push(vec![pair.id.clone(), "oracle".into(), exact(e2)]);

        let t = Instant::now();
        let (fused, _) = net.forward(pair);
        let fused = fused.quantized();
        let secs = t.elapsed().as_secs_f64();
        let (p, e2) = panel(pair, &fused, "ae-net")?;
        acc[net_idx].add(&p, e2, secs);
        pair_rows.push(vec![pair.id.clone(), "ae-net".into(), exact(e2)]);
    }
    let names: Vec<String> = reg
        .entries()
        .iter()
        .map(|e| e.id.name.clone())
        .chain(["oracle".to_string(), "ae-net".to_string()])
        .collect();
    let table: Vec<Vec<String>> = names.iter().zip(&acc).map(|(n, a)| a.cells(n)).collect();
    let dir = ctx.report_dir();
    write_file(&dir.join("bench.csv"), csv_text(BENCH_HEADER, &table))?;
    write_file(
        &dir.join("bench_pairs.csv"),
        csv_text("pair_id,method,E2", &pair_rows),
    )?;
    let mut md = String::from("| ");
    md.push_str(&BENCH_HEADER.split(',').collect::<Vec<_>>().join(" | "));
    md.push_str(" |\n|");
    md.push_str(&"---|".repeat(BENCH_HEADER.split(',').count()));
    md.push('\n');
    for row in &table {
        md.push_str(&format!("| {} |\n", row.join(" | ")));
    }
    md.push_str(&format!(
        "\nMeans over {} pairs; E2 against both sources; time_s is wall-clock seconds per pair.\n",
        pairs.len()
    ));
    write_file(&dir.join("bench.md"), md)?;
    println!(
        "benchmarked {} rows over {} pairs",
        table.len(),
        pairs.len()
    );
    Ok(())
}

fn cmd_gen_synthetic(ctx: &Context, count: usize, size: usize) -> Result<(), CliError> {
    if count == 0 {
        return Err(usage("--count must be >= 1"));
    }
    if size < 16 {
        return Err(usage("--size must be >= 16"));
    }
    let dir = ctx.out.join("synthetic");
    fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    let mut rows = Vec::with_capacity(count);
    for pair in synthetic::pair_set(count, size, size, ctx.cfg.seed) {
        let rel =
            |suffix: &str| PathBuf::from("synthetic").join(format!("{}_{suffix}.pgm", pair.id));
        let write = |img: &GrayImage, suffix: &str| {
            let path = ctx.out.join(rel(suffix));
            write_file(&path, encode_pgm(img))
        };
        write(&pair.a, "a")?;
        write(&pair.b, "b")?;
        let reference = pair
            .reference
            .as_ref()
            .expect("synthetic pairs carry a reference");
        write(reference, "ref")?;
        rows.push(ManifestRow {
            pair_id: pair.id.clone(),
            path_a: rel("a"),
            path_b: rel("b"),
            path_ref: Some(rel("ref")),
            task: pair.task,
        });
    }
    let manifest = ctx.out.join("manifest.csv");
    write_file(&manifest, render_manifest(&rows))?;
    println!("wrote {count} synthetic pairs and {}", manifest.display());
    Ok(())
}

fn cmd_fit_nss(
    ctx: &Context,
    images: Option<PathBuf>,
    output: Option<PathBuf>,
    count: usize,
    size: usize,
) -> Result<(), CliError> {
    let corpus = match images {
        Some(dir) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
                .collect();
            paths.sort();
            paths
                .iter()
                .map(|p| load_pgm(p).map_err(|e| usage(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?
        }
        None => synthetic::pristine_corpus(count, size, ctx.cfg.seed),
    };
    let model = niqe_fit(
        &corpus,
        ctx.cfg.nss_patch_size,
        ctx.cfg.nss_sharpness_fraction,
    )
    .map_err(|e| usage(e.to_string()))?;
    let path = output.unwrap_or_else(|| ctx.out.join("nss.model"));
    model.save(&path).map_err(|e| io(&path, e))?;
    println!(
        "fitted NSS model from {} images -> {}",
        corpus.len(),
        path.display()
    );
    Ok(())
}
