//! One function per subcommand. Each reads its inputs, calls the library,
//! writes outputs and a manifest beside them, and prints a short summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use qgctx::corpus::{self, Corpus};
use qgctx::gateway::{GatewayConfig, RetryPolicy, SamplingParams};
use qgctx::metrics::{score_corpus, GoldQuestion, MetricReport, Prediction};
use qgctx::mixer::{self, MixStrategy};
use qgctx::prompt::{load_preset_file, Exemplar, PromptMode, StylePreset};
use qgctx::quality::{self, QualitySummary};
use qgctx::report::{
    self, CurveMetric, ExperimentManifest, GatewayFingerprint, RunParams, TableFormat,
};
use qgctx::synthesis::{self, ContainmentMode, LengthLimits, SynthesisError, SynthesisOptions};
use qgctx::{jsonl, Gateway};

use crate::config::{pick, ConfigError, FileConfig};
use crate::{
    ContainmentArg, CurveArgs, EmitArgs, GatewayArgs, IngestArgs, InputFormat, MixArgs, ModeArg,
    QualityArgs, RealContextsArgs, SampleArgs, ScoreArgs, SplitArgs, SweepArgs, SynthesizeArgs,
    TableArgs, TableFormatArg, VerifyArgs,
};

/// A manifest no longer matches the files on disk.
#[derive(Debug, thiserror::Error)]
#[error("{0} manifest(s) failed verification")]
pub struct VerifyFailed(pub usize);

fn config_error(message: impl Into<String>) -> anyhow::Error {
    ConfigError(message.into()).into()
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let ingested = corpus::ingest_jsonl(path)?;
    Ok(ingested.corpus)
}

fn announce(what: String, manifest: &Path) {
    println!("{what} (manifest {})", manifest.display());
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let ingested = match a.format {
        InputFormat::Squad => corpus::ingest_squad(&a.input)?,
        InputFormat::Jsonl => corpus::ingest_jsonl(&a.input)?,
    };
    for w in &ingested.warnings {
        log::warn!("{w}");
    }
    let c = &ingested.corpus;
    c.write_jsonl(&a.out)?;
    let run = RunParams::new("ingest")
        .input("source", &a.input)
        .output("corpus", &a.out)
        .param("format", format!("{:?}", a.format).to_lowercase())
        .param("content_hash", c.content_hash())
        .param("skipped_unanswerable", ingested.skipped)
        .param("sources", corpus::source_counts(c));
    let (_, mpath) = report::write_manifest_beside(&a.out, &run)?;
    announce(
        format!(
            "ingested {} pairs ({} unanswerable skipped) into {}",
            c.len(),
            ingested.skipped,
            a.out.display()
        ),
        &mpath,
    );
    Ok(())
}

pub fn split(a: &SplitArgs) -> Result<()> {
    let c = load_corpus(&a.corpus)?;
    let (train, test) = corpus::split(&c, a.test_fraction, a.seed)?;
    train.write_jsonl(&a.train_out)?;
    test.write_jsonl(&a.test_out)?;
    let run = RunParams::new("split")
        .seed("split", a.seed)
        .input("corpus", &a.corpus)
        .output("train", &a.train_out)
        .output("test", &a.test_out)
        .param("test_fraction", a.test_fraction);
    let (_, mpath) = report::write_manifest_beside(&a.train_out, &run)?;
    report::manifest_for(&run)?.write(&report::manifest_path(&a.test_out))?;
    announce(
        format!(
            "split {} pairs into {} train / {} test",
            c.len(),
            train.len(),
            test.len()
        ),
        &mpath,
    );
    Ok(())
}

pub fn sample(a: &SampleArgs) -> Result<()> {
    let c = load_corpus(&a.corpus)?;
    let subset = corpus::sample_subset(&c, a.n, a.seed)?;
    subset.write_jsonl(&a.out)?;
    let mut run = RunParams::new("sample")
        .seed("sample", a.seed)
        .input("corpus", &a.corpus)
        .output("subset", &a.out);
    run.subset_size = Some(a.n);
    let (_, mpath) = report::write_manifest_beside(&a.out, &run)?;
    announce(
        format!(
            "sampled {} of {} pairs into {}",
            subset.len(),
            c.len(),
            a.out.display()
        ),
        &mpath,
    );
    Ok(())
}

pub fn real_contexts(a: &RealContextsArgs) -> Result<()> {
    let c = load_corpus(&a.corpus)?;
    let triplets = synthesis::attach_real_contexts(&c)?;
    synthesis::write_triplets(&a.out, &triplets)?;
    let mut run = RunParams::new("real-contexts")
        .input("corpus", &a.corpus)
        .output("triplets", &a.out);
    run.mode = Some("real".into());
    run.subset_size = Some(triplets.len());
    let (_, mpath) = report::write_manifest_beside(&a.out, &run)?;
    announce(
        format!(
            "wrote {} real-context triplets to {}",
            triplets.len(),
            a.out.display()
        ),
        &mpath,
    );
    Ok(())
}

fn gateway_config(g: &GatewayArgs, cfg: &FileConfig) -> Result<GatewayConfig> {
    let file = &cfg.gateway;
    let endpoint = g.endpoint.clone().or_else(|| file.endpoint.clone()).ok_or_else(|| {
        config_error("no endpoint configured: pass --endpoint, set QGCTX_ENDPOINT, or use `mock:` for offline runs")
    })?;
    let defaults = GatewayConfig::default();
    let retry = RetryPolicy {
        max_retries: pick(g.max_retries, file.max_retries, defaults.retry.max_retries),
        ..defaults.retry
    };
    Ok(GatewayConfig {
        endpoint,
        qa_endpoint: g.qa_endpoint.clone().or_else(|| file.qa_endpoint.clone()),
        api_key_env: pick(
            g.api_key_env.clone(),
            file.api_key_env.clone(),
            defaults.api_key_env,
        ),
        retry,
        requests_per_minute: g.requests_per_minute.or(file.requests_per_minute),
        cache_dir: g.cache_dir.clone().or_else(|| file.cache_dir.clone()),
        timeout_secs: pick(None, file.timeout_secs, defaults.timeout_secs),
    })
}

fn parallelism(g: &GatewayArgs, cfg: &FileConfig) -> Result<usize> {
    let p = pick(g.parallelism, cfg.synthesis.parallelism, 4);
    if p == 0 {
        return Err(config_error("parallelism must be positive"));
    }
    Ok(p)
}

fn load_style(name: &str, preset_file: Option<&Path>) -> Result<(StylePreset, Vec<Exemplar>)> {
    match preset_file {
        Some(p) => Ok(load_preset_file(p)?),
        None => Ok((StylePreset::builtin(name)?, Vec::new())),
    }
}

pub fn synthesize(a: &SynthesizeArgs, cfg: &FileConfig) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let (style, mut exemplars) = load_style(&a.style, a.preset_file.as_deref())?;
    let mode = match a.mode {
        ModeArg::Zero => PromptMode::ZeroShot,
        ModeArg::Few => PromptMode::FewShot,
    };
    if let Some(path) = &a.exemplars {
        exemplars = jsonl::read(path)?;
        qgctx::prompt::validate_exemplars(&exemplars)?;
    }
    if mode == PromptMode::FewShot && exemplars.is_empty() {
        exemplars.push(Exemplar::solar_energy());
    }
    if mode == PromptMode::ZeroShot {
        exemplars.clear();
    }
    let gcfg = gateway_config(&a.gateway, cfg)?;
    let gateway = Gateway::from_config(&gcfg)?;
    let s = &cfg.synthesis;
    let defaults = SamplingParams::default();
    let mut opts = SynthesisOptions::new(&a.out, mode);
    opts.model_name = pick(a.model.clone(), s.model.clone(), opts.model_name);
    opts.params = SamplingParams {
        temperature: pick(a.temperature, s.temperature, defaults.temperature),
        top_p: pick(a.top_p, s.top_p, defaults.top_p),
        max_output_tokens: pick(
            a.max_output_tokens,
            s.max_output_tokens,
            defaults.max_output_tokens,
        ),
    };
    opts.parallelism = parallelism(&a.gateway, cfg)?;
    opts.failure_threshold = pick(
        a.failure_threshold,
        s.failure_threshold,
        opts.failure_threshold,
    );
    let limits = LengthLimits::default();
    opts.limits = LengthLimits {
        min_words: s.min_words.unwrap_or(limits.min_words),
        max_words: s.max_words.unwrap_or(limits.max_words),
    };

    let (run, result) = match synthesis::synthesize(&corpus, &style, &exemplars, &gateway, &opts) {
        Ok(run) => (run, Ok(())),
        Err(SynthesisError::FailureRateExceeded {
            failed,
            attempted,
            threshold,
            summary,
            run,
        }) => {
            let err = SynthesisError::FailureRateExceeded {
                failed,
                attempted,
                threshold,
                summary,
                run: run.clone(),
            };
            (*run, Err(err))
        }
        Err(e) => return Err(e.into()),
    };
    let mpath = report::manifest_path(&a.out);
    run.manifest.write(&mpath)?;
    announce(
        format!(
            "{} contexts written, {} resumed, {} failed, {} not attempted; {} network calls",
            run.completed,
            run.resumed,
            run.failed.len(),
            run.not_attempted,
            gateway.network_calls()
        ),
        &mpath,
    );
    result.context("synthesis aborted; rerun the same command to resume")
}

fn mix_seed_strategy(
    seed: Option<u64>,
    strategy: Option<crate::StrategyArg>,
    cfg: &FileConfig,
) -> (u64, MixStrategy) {
    (
        pick(seed, cfg.mix.seed, 0),
        pick(
            strategy.map(Into::into),
            cfg.mix.strategy,
            MixStrategy::default(),
        ),
    )
}

pub fn mix(a: &MixArgs, cfg: &FileConfig) -> Result<()> {
    let (seed, strategy) = mix_seed_strategy(a.seed, a.strategy, cfg);
    let real = synthesis::read_triplets(&a.real)?;
    let synthetic = synthesis::read_triplets(&a.synthetic)?;
    let mixed = mixer::mix(&real, &synthetic, a.fraction, seed, strategy)?;
    synthesis::write_triplets(&a.out, &mixed)?;
    let flipped = mixed
        .iter()
        .filter(|t| t.context_kind.is_synthetic())
        .count();
    let mut run = RunParams::new("mix")
        .seed("mix", seed)
        .input("real", &a.real)
        .input("synthetic", &a.synthetic)
        .output("triplets", &a.out)
        .param("strategy", strategy)
        .param("synthetic_count", flipped);
    run.mix_fraction = Some(a.fraction);
    run.subset_size = Some(mixed.len());
    let (_, mpath) = report::write_manifest_beside(&a.out, &run)?;
    announce(
        format!(
            "mixed {} triplets, {flipped} synthetic, into {}",
            mixed.len(),
            a.out.display()
        ),
        &mpath,
    );
    Ok(())
}

pub fn sweep(a: &SweepArgs, cfg: &FileConfig) -> Result<()> {
    let seed = pick(a.seed, cfg.mix.seed, 0);
    let triplets = synthesis::read_triplets(&a.triplets)?;
    let subsets = mixer::sweep_sizes(&triplets, &a.sizes, seed)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (size, subset) in &subsets {
        let path = a.out_dir.join(format!("subset_{size}.jsonl"));
        synthesis::write_triplets(&path, subset)?;
        let mut run = RunParams::new("sweep")
            .seed("sweep", seed)
            .input("triplets", &a.triplets)
            .output("subset", &path);
        run.subset_size = Some(*size);
        let (_, mpath) = report::write_manifest_beside(&path, &run)?;
        announce(
            format!("wrote {} triplets to {}", subset.len(), path.display()),
            &mpath,
        );
    }
    Ok(())
}

pub fn emit(a: &EmitArgs, cfg: &FileConfig) -> Result<()> {
    let (style, _) = load_style(&a.style, a.preset_file.as_deref())?;
    let max_tokens = a.max_input_tokens.or(cfg.emit.max_input_tokens);
    let triplets = synthesis::read_triplets(&a.triplets)?;
    let rep = mixer::emit_trainset(&triplets, &style, &a.out, max_tokens)?;
    if rep.truncated_count > 0 {
        log::warn!(
            "{} inputs truncated to {} tokens",
            rep.truncated_count,
            max_tokens.unwrap_or_default()
        );
    }
    let mut run = RunParams::new("emit")
        .input("triplets", &a.triplets)
        .output("trainset", &a.out)
        .param("max_input_tokens", max_tokens)
        .param("truncated_count", rep.truncated_count);
    run.preset = Some((&style).into());
    run.subset_size = Some(rep.count);
    let (_, mpath) = report::write_manifest_beside(&a.out, &run)?;
    announce(
        format!(
            "emitted {} records ({} truncated) to {}",
            rep.count,
            rep.truncated_count,
            a.out.display()
        ),
        &mpath,
    );
    Ok(())
}

#[derive(Deserialize)]
struct ExternalScore {
    pair_id: String,
    score: f64,
}

fn read_external(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(map) = serde_json::from_str::<BTreeMap<String, f64>>(&text) {
        return Ok(map);
    }
    let rows: Vec<ExternalScore> = jsonl::read(path)?;
    Ok(rows.into_iter().map(|r| (r.pair_id, r.score)).collect())
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let preds: Vec<Prediction> = jsonl::read(&a.pred)?;
    let golds: Vec<GoldQuestion> = jsonl::read(&a.gold)?;
    let mut rep = score_corpus(&preds, &golds)?;
    let mut run = RunParams::new("score")
        .input("predictions", &a.pred)
        .input("gold", &a.gold);
    if let Some(ext) = &a.external_scores {
        let scores = read_external(ext)?;
        let missing = rep.merge_external(&scores);
        if !missing.is_empty() {
            log::warn!("{} examples have no external score", missing.len());
        }
        run = run.input("external_scores", ext);
    }
    rep.write_json(&a.out)?;
    let csv_path = a.out.with_extension("csv");
    let file =
        fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    rep.write_csv(std::io::BufWriter::new(file))?;
    run = run
        .output("report", &a.out)
        .output("per_example", &csv_path);
    run.subset_size = Some(rep.n);
    let (_, mpath) = report::write_manifest_beside(&a.out, &run)?;
    announce(rep.summary_line(), &mpath);
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn quality(a: &QualityArgs, cfg: &FileConfig) -> Result<()> {
    let q = &cfg.quality;
    let bins = pick(a.bins, q.bins, 20);
    let cap = pick(a.review_cap, q.review_cap, 100);
    let seed = pick(a.seed, q.seed, 0);
    let mode = pick(
        a.containment.map(ContainmentArg::into),
        q.containment,
        ContainmentMode::default(),
    );
    let triplets = synthesis::read_triplets(&a.triplets)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut outputs: Vec<(&str, PathBuf)> = Vec::new();

    let lengths = quality::length_series(&triplets, bins)?;
    let p = a.out.join("lengths.json");
    write_json(&p, &lengths)?;
    outputs.push(("lengths", p));

    let containment = quality::containment_rate(&triplets, mode)?;
    let p = a.out.join("containment.json");
    write_json(&p, &containment)?;
    outputs.push(("containment", p));

    let needs_gateway = !(a.skip_perplexity && a.skip_probe);
    let gateway = if needs_gateway {
        Some(Gateway::from_config(&gateway_config(&a.gateway, cfg)?)?)
    } else {
        None
    };
    let par = parallelism(&a.gateway, cfg)?;
    let scorer = pick(a.scorer.clone(), q.scorer.clone(), "gpt2".to_string());

    let ppl = match (&gateway, a.skip_perplexity) {
        (Some(gw), false) => {
            let stats = quality::perplexity_stats(&triplets, gw, &scorer, bins, par)?;
            let p = a.out.join("perplexity.json");
            write_json(&p, &stats)?;
            outputs.push(("perplexity", p));
            Some(stats)
        }
        _ => None,
    };
    let probe = match (&gateway, a.skip_probe) {
        (Some(gw), false) => {
            let probe = quality::qa_probe(&triplets, gw, par)?;
            let p = a.out.join("probe.json");
            write_json(&p, &probe)?;
            outputs.push(("probe", p));
            Some(probe)
        }
        _ => None,
    };

    let cases = quality::review_cases(&triplets, &containment, probe.as_ref());
    let p = a.out.join("review.csv");
    let rows = quality::review_worksheet(&cases, cap, seed, &p)?;
    outputs.push(("review", p));

    let summary = QualitySummary::new(&containment, probe.as_ref(), ppl.as_ref());
    let p = a.out.join("summary.json");
    write_json(&p, &summary)?;
    outputs.push(("summary", p));

    let mut run = RunParams::new("quality")
        .seed("review", seed)
        .input("triplets", &a.triplets)
        .param("bins", bins)
        .param("review_cap", cap)
        .param("containment_mode", mode);
    for (role, path) in outputs {
        run = run.output(role, path);
    }
    run.subset_size = Some(triplets.len());
    if let Some(gw) = &gateway {
        let mut fp = GatewayFingerprint::new(&gateway_config(&a.gateway, cfg)?, None, None);
        if !a.skip_perplexity {
            fp.model_name = Some(scorer.clone());
        }
        log::debug!("gateway {}", gw.describe());
        run.gateway = Some(fp);
    }
    let (_, mpath) = report::write_manifest_beside(&a.out, &run)?;
    let mut line = format!(
        "{} contexts: containment {:.3}, {} review rows",
        summary.n, summary.containment_rate, rows
    );
    if let (Some(em), Some(f1)) = (summary.em_rate, summary.mean_f1) {
        line.push_str(&format!(", probe em {em:.3} f1 {f1:.3}"));
    }
    announce(line, &mpath);
    Ok(())
}

fn split_pair(s: &str) -> Result<(&str, &Path)> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k, Path::new(v))),
        _ => Err(config_error(format!("expected KEY=PATH, got {s:?}"))),
    }
}

fn read_report(path: &Path) -> Result<MetricReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()))
}

pub fn table(a: &TableArgs) -> Result<()> {
    let mut reports = Vec::new();
    let mut run = RunParams::new("report-table");
    for s in &a.inputs {
        let (label, path) = split_pair(s)?;
        reports.push((label.to_string(), read_report(path)?));
        run = run.input(label, path);
    }
    let format = match a.format {
        TableFormatArg::Csv => TableFormat::Csv,
        TableFormatArg::Markdown => TableFormat::Markdown,
    };
    let text = report::table_compare(&reports, format)?;
    fs::write(&a.out, &text).with_context(|| format!("writing {}", a.out.display()))?;
    run = run.output("table", &a.out);
    let (_, mpath) = report::write_manifest_beside(&a.out, &run)?;
    print!("{text}");
    announce(format!("wrote {}", a.out.display()), &mpath);
    Ok(())
}

pub fn curve(a: &CurveArgs) -> Result<()> {
    let metrics = a
        .metrics
        .iter()
        .map(|m| CurveMetric::parse(m).ok_or_else(|| config_error(format!("unknown metric {m:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    let mut run = RunParams::new("report-curve");
    for s in &a.points {
        let (frac, path) = split_pair(s)?;
        let fraction: f64 = frac
            .parse()
            .map_err(|_| config_error(format!("fraction {frac:?} is not a number")))?;
        points.push((fraction, read_report(path)?));
        run = run.input(&format!("fraction={frac}"), path);
    }
    let text = report::curve_data(&points, &metrics)?;
    fs::write(&a.out, &text).with_context(|| format!("writing {}", a.out.display()))?;
    run = run.output("curve", &a.out);
    let (_, mpath) = report::write_manifest_beside(&a.out, &run)?;
    announce(
        format!(
            "wrote {} curve rows to {}",
            text.lines().count().saturating_sub(1),
            a.out.display()
        ),
        &mpath,
    );
    Ok(())
}

pub fn verify(a: &VerifyArgs) -> Result<()> {
    let mut bad = 0;
    for path in &a.manifest {
        let m = ExperimentManifest::read(path)?;
        let diffs = report::verify_manifest(&m);
        if diffs.is_empty() {
            println!("ok  {} ({} {})", path.display(), m.command, m.run_id);
        } else {
            bad += 1;
            println!("MISMATCH  {} ({} {})", path.display(), m.command, m.run_id);
            for d in diffs {
                println!("  {d}");
            }
        }
    }
    if bad > 0 {
        bail!(VerifyFailed(bad));
    }
    Ok(())
}
