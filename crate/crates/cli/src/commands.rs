use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Parser;
use kdspd::corpus::cipher::{files, gen_cipher_corpus, CipherSpec, CorpusManifest};
use kdspd::corpus::trec::{load_qrels, load_run, write_qrels, write_run};
use kdspd::corpus::vocab::Vocab;
use kdspd::corpus::{load_bitext, load_collection, load_queries, BitextPair};
use kdspd::eval::{
    biased_relevance_split, evaluate, merge_runs, parallel_doc_analysis, MergeStrategy, Metric, ParallelGroups,
};
use kdspd::model::{checkpoint, SpdConfig, SpdModel, Variant};
use kdspd::retrieval::{index_collection, index_with_teacher, search, DenseIndex, PassageConfig};
use kdspd::teacher::{load_teacher_file, teacher_query_embed, TeacherProvider};
use kdspd::train::{evaluate_agreement, train, write_trace, TrainConfig};
use kdspd::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::chart::{parallel_chart, to_svg};
use crate::manifest::RunManifest;
use crate::{Cli, Command, TeacherArgs};

pub const TRAIN_SCHEMA: u32 = 1;

/// Model shape in a training config; vocabulary size and languages come
/// from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub prompt_len: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub encoder_layers: usize,
    pub variant: Variant,
    pub ln_eps: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = SpdConfig::desk(0, Vec::new());
        Self {
            dim: c.dim,
            prompt_len: c.prompt_len,
            decoder_layers: c.decoder_layers,
            heads: c.heads,
            ffn_dim: c.ffn_dim,
            max_seq_len: c.max_seq_len,
            encoder_layers: c.encoder_layers,
            variant: c.variant,
            ln_eps: c.ln_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub schema: u32,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub model_seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })
}

/// Prefixes content errors with the file they came from.
fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    let p = path.display();
    r.map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{p}: {m}")),
        Error::Data(m) => Error::Data(format!("{p}: {m}")),
        Error::Conflict(m) => Error::Conflict(format!("{p}: {m}")),
        Error::Contract(m) => Error::Contract(format!("{p}: {m}")),
        Error::MissingKey(k) => Error::MissingKey(format!("{k} (in {p})")),
        other => other,
    })
}

/// Drops `--out X` / `--out=X` so a manifest does not depend on where it
/// was written.
fn strip_out(args: &[String]) -> Vec<String> {
    let mut kept = Vec::new();
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            kept.push(a.clone());
        }
    }
    kept
}

fn teacher_from(args: &TeacherArgs, m: &mut RunManifest) -> Result<TeacherProvider> {
    match (&args.teacher, args.synthetic_teacher) {
        (Some(path), false) => {
            m.input(path)?;
            at(path, load_teacher_file(path))
        }
        (None, true) => {
            m.seeds.insert("teacher".into(), args.teacher_seed);
            TeacherProvider::synthetic(args.teacher_dim, args.teacher_seed, args.teacher_salt.clone())
        }
        _ => Err(Error::Config(
            "give exactly one of --teacher FILE or --synthetic-teacher".into(),
        )),
    }
}

pub fn run(command: Command, argv: &[String]) -> Result<()> {
    let args = strip_out(argv);
    match command {
        Command::GenCorpus { spec, seed, out } => gen_corpus(spec.as_deref(), seed, &out, &args),
        Command::Train {
            config,
            corpus,
            teacher,
            out,
        } => cmd_train(&config, &corpus, &teacher, &out, &args),
        Command::Index {
            checkpoint,
            collection,
            vocab,
            languages,
            window,
            stride,
            teacher,
            out,
        } => cmd_index(
            IndexArgs {
                checkpoint,
                collection,
                vocab,
                languages,
                window,
                stride,
                teacher,
            },
            &out,
            &args,
        ),
        Command::Search {
            index,
            queries,
            teacher,
            k,
            tag,
            out,
        } => cmd_search(&index, &queries, &teacher, k, &tag, &out, &args),
        Command::Merge {
            strategy,
            seed,
            tag,
            out,
            runs,
        } => cmd_merge(&strategy, seed, &tag, &runs, &out, &args),
        Command::Eval {
            run,
            qrels,
            metrics,
            compare,
            out,
        } => cmd_eval(&run, &qrels, &metrics, compare.as_deref(), &out, &args),
        Command::AnalyzeParallel {
            run,
            groups,
            depth,
            out,
        } => cmd_analyze(&run, &groups, depth, &out, &args),
        Command::Zeroshot {
            checkpoint,
            new_lang,
            out,
        } => cmd_zeroshot(&checkpoint, &new_lang, &out, &args),
        Command::BiasedSplit {
            qrels,
            groups,
            languages,
            fraction,
            seed,
            out,
        } => cmd_biased_split(&qrels, &groups, &languages, fraction, seed, &out, &args),
        Command::Replay { manifest, out } => replay(&manifest, &out),
    }
}

fn replay(path: &Path, out: &Path) -> Result<()> {
    let m = RunManifest::load(path)?;
    let mut argv = vec!["kdspd".to_string()];
    argv.extend(m.args.iter().cloned());
    argv.push("--out".into());
    argv.push(out.display().to_string());
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if matches!(cli.command, Command::Replay { .. }) {
        return Err(Error::Config(format!(
            "{}: a manifest cannot replay a replay",
            path.display()
        )));
    }
    run(cli.command, &argv[1..])
}

fn gen_corpus(spec_path: Option<&Path>, seed: u64, out: &Path, args: &[String]) -> Result<()> {
    let mut m = RunManifest::new("gen-corpus", args);
    let spec: CipherSpec = match spec_path {
        Some(p) => {
            m.input(p)?;
            read_json(p)?
        }
        None => CipherSpec::default(),
    };
    let corpus = gen_cipher_corpus(&spec, seed)?;
    corpus.write(out)?;
    m.config = serde_json::to_value(&spec)?;
    m.seeds.insert("corpus".into(), seed);
    let mut names: Vec<String> = std::fs::read_dir(out)
        .map_err(|e| Error::Io {
            path: out.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n != crate::manifest::MANIFEST_FILE)
        .collect();
    names.sort();
    for n in names {
        m.output(out, &n)?;
    }
    m.write(out)
}

#[derive(Serialize)]
struct HeldoutReport {
    overall: kdspd::train::Agreement,
    cipher: Option<kdspd::train::Agreement>,
    per_language: BTreeMap<String, kdspd::train::Agreement>,
}

fn heldout_report(
    model: &SpdModel<f32>,
    teacher: &TeacherProvider,
    vocab: &Vocab,
    pairs: &[BitextPair],
) -> Result<HeldoutReport> {
    let mut by_lang: BTreeMap<String, Vec<BitextPair>> = BTreeMap::new();
    for p in pairs {
        by_lang.entry(p.lang.clone()).or_default().push(p.clone());
    }
    let cipher: Vec<BitextPair> = pairs.iter().filter(|p| p.lang != "en").cloned().collect();
    Ok(HeldoutReport {
        overall: evaluate_agreement(model, teacher, vocab, pairs)?,
        cipher: if cipher.is_empty() {
            None
        } else {
            Some(evaluate_agreement(model, teacher, vocab, &cipher)?)
        },
        per_language: by_lang
            .iter()
            .map(|(l, p)| Ok((l.clone(), evaluate_agreement(model, teacher, vocab, p)?)))
            .collect::<Result<_>>()?,
    })
}

fn cmd_train(config: &Path, corpus: &Path, teacher: &TeacherArgs, out: &Path, args: &[String]) -> Result<()> {
    let mut m = RunManifest::new("train", args);
    m.input(config)?;
    let file: TrainFile = read_json(config)?;
    if file.schema != TRAIN_SCHEMA {
        return Err(Error::Config(format!(
            "{}: schema {} is not supported (expected {TRAIN_SCHEMA})",
            config.display(),
            file.schema
        )));
    }
    let cm = CorpusManifest::load(corpus)?;
    let vocab_path = corpus.join(files::VOCAB);
    let bitext_path = corpus.join(files::BITEXT);
    let heldout_path = corpus.join(files::HELDOUT);
    for p in [&corpus.join(files::MANIFEST), &vocab_path, &bitext_path, &heldout_path] {
        m.input(p)?;
    }
    let vocab = Vocab::load(&vocab_path)?;
    let pairs = load_bitext(&bitext_path, Some(&cm.trained_languages))?;
    let heldout = load_bitext(&heldout_path, Some(&cm.trained_languages))?;
    let teacher = teacher_from(teacher, &mut m)?;

    let s = &file.model;
    let model_config = SpdConfig {
        dim: s.dim,
        prompt_len: s.prompt_len,
        decoder_layers: s.decoder_layers,
        heads: s.heads,
        ffn_dim: s.ffn_dim,
        vocab_size: vocab.size(),
        max_seq_len: s.max_seq_len,
        encoder_layers: s.encoder_layers,
        variant: s.variant,
        languages: cm.trained_languages.clone(),
        ln_eps: s.ln_eps,
    };
    let mut model = SpdModel::<f32>::new(model_config, file.model_seed)?;
    m.config = serde_json::to_value(&file)?;
    m.seeds.insert("model".into(), file.model_seed);
    m.seeds.insert("train".into(), file.train.seed);

    create_dir(out)?;
    let trace = match train(&mut model, &teacher, &vocab, &pairs, &file.train, Some(out)) {
        Ok(t) => t,
        Err(abort) => {
            // Keep what was learned about the failure.
            write_trace(&abort.trace, &out.join("trace.jsonl"))?;
            return Err(abort.error);
        }
    };
    write_trace(&trace, &out.join("trace.jsonl"))?;
    let report = heldout_report(&model, &teacher, &vocab, &heldout)?;
    write_file(&out.join("heldout.json"), serde_json::to_string_pretty(&report)? + "\n")?;

    let mut names: Vec<String> = std::fs::read_dir(out)
        .map_err(|e| Error::Io {
            path: out.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.ends_with(".spd"))
        .collect();
    names.sort();
    for n in &names {
        let h = m.output(out, n)?;
        if n == "final.spd" {
            m.checkpoint_sha256 = Some(h);
        }
    }
    m.output(out, "trace.jsonl")?;
    m.output(out, "heldout.json")?;
    m.write(out)
}

struct IndexArgs {
    checkpoint: Option<PathBuf>,
    collection: PathBuf,
    vocab: Option<PathBuf>,
    languages: Vec<String>,
    window: Option<usize>,
    stride: Option<usize>,
    teacher: TeacherArgs,
}

pub const INDEX_FILE: &str = "index.spdi";
pub const RUN_FILE: &str = "run.txt";

fn cmd_index(a: IndexArgs, out: &Path, args: &[String]) -> Result<()> {
    let mut m = RunManifest::new("index", args);
    m.input(&a.collection)?;
    let mut docs = load_collection(&a.collection)?;
    if !a.languages.is_empty() {
        docs.retain(|d| a.languages.contains(&d.lang));
    }
    if docs.is_empty() {
        return Err(Error::Data(format!(
            "{}: no documents to index",
            a.collection.display()
        )));
    }
    let index = match &a.checkpoint {
        Some(ckpt) => {
            if a.teacher.teacher.is_some() || a.teacher.synthetic_teacher {
                return Err(Error::Config(
                    "--checkpoint and a teacher are mutually exclusive".into(),
                ));
            }
            let vocab_path = a
                .vocab
                .as_ref()
                .ok_or_else(|| Error::Config("--vocab is required with --checkpoint".into()))?;
            m.input(ckpt)?;
            m.checkpoint_sha256 = m.inputs.last().map(|f| f.sha256.clone());
            m.input(vocab_path)?;
            let model = at(ckpt, checkpoint::load(ckpt))?;
            let vocab = Vocab::load(vocab_path)?;
            let default = PassageConfig::for_model(model.config().max_seq_len);
            let window = a.window.unwrap_or(default.window);
            let passages = PassageConfig {
                window,
                stride: a.stride.unwrap_or((window / 2).max(1)),
            };
            m.config = serde_json::json!({
                "mode": "student",
                "languages": a.languages,
                "window": passages.window,
                "stride": passages.stride,
            });
            at(&a.collection, index_collection(&docs, &vocab, &model, passages))?
        }
        None => {
            let teacher = teacher_from(&a.teacher, &mut m)?;
            m.config = serde_json::json!({
                "mode": "teacher",
                "languages": a.languages,
                "teacher": &a.teacher,
            });
            at(&a.collection, index_with_teacher(&docs, &teacher))?
        }
    };
    create_dir(out)?;
    index.save(&out.join(INDEX_FILE))?;
    m.output(out, INDEX_FILE)?;
    m.write(out)
}

fn cmd_search(
    index_path: &Path,
    queries_path: &Path,
    teacher: &TeacherArgs,
    k: usize,
    tag: &str,
    out: &Path,
    args: &[String],
) -> Result<()> {
    let mut m = RunManifest::new("search", args);
    m.input(index_path)?;
    m.input(queries_path)?;
    let index = at(index_path, DenseIndex::load(index_path))?;
    let queries = load_queries(queries_path)?;
    let provider = teacher_from(teacher, &mut m)?;
    if provider.dim() != index.dim() {
        return Err(Error::Config(format!(
            "teacher dim {} differs from index dim {}",
            provider.dim(),
            index.dim()
        )));
    }
    let lists = queries
        .iter()
        .map(|q| {
            search(
                &index,
                &q.id,
                &at(queries_path, teacher_query_embed(&q.text, &provider))?,
                k,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    m.config = serde_json::json!({ "k": k, "tag": tag, "teacher": teacher });
    create_dir(out)?;
    write_run(&out.join(RUN_FILE), &lists, tag)?;
    m.output(out, RUN_FILE)?;
    m.write(out)
}

fn cmd_merge(strategy: &str, seed: u64, tag: &str, runs: &[PathBuf], out: &Path, args: &[String]) -> Result<()> {
    let mut m = RunManifest::new("merge", args);
    let strategy: MergeStrategy = strategy.parse()?;
    let mut loaded = Vec::with_capacity(runs.len());
    for r in runs {
        m.input(r)?;
        loaded.push(load_run(r)?);
    }
    let merged = merge_runs(&loaded, strategy, seed)?;
    m.config = serde_json::json!({ "strategy": format!("{strategy:?}"), "tag": tag });
    m.seeds.insert("merge".into(), seed);
    create_dir(out)?;
    write_run(&out.join(RUN_FILE), &merged, tag)?;
    m.output(out, RUN_FILE)?;
    m.write(out)
}

fn cmd_eval(
    run_path: &Path,
    qrels_path: &Path,
    metrics: &[String],
    compare: Option<&Path>,
    out: &Path,
    args: &[String],
) -> Result<()> {
    let mut m = RunManifest::new("eval", args);
    let metrics: Vec<Metric> = metrics.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    m.input(run_path)?;
    m.input(qrels_path)?;
    let run = load_run(run_path)?;
    let qrels = load_qrels(qrels_path)?;
    let other = match compare {
        Some(p) => {
            m.input(p)?;
            Some(load_run(p)?)
        }
        None => None,
    };
    let report = evaluate(&run, &qrels, &metrics, other.as_deref())?;
    m.config = serde_json::json!({ "metrics": metrics });
    create_dir(out)?;
    let text = report.to_text();
    write_file(&out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    write_file(&out.join("report.txt"), &text)?;
    print!("{text}");
    m.output(out, "report.json")?;
    m.output(out, "report.txt")?;
    m.write(out)
}

fn cmd_analyze(run_path: &Path, groups_path: &Path, depth: usize, out: &Path, args: &[String]) -> Result<()> {
    let mut m = RunManifest::new("analyze-parallel", args);
    m.input(run_path)?;
    m.input(groups_path)?;
    let run = load_run(run_path)?;
    let text = std::fs::read_to_string(groups_path).map_err(|e| Error::Io {
        path: groups_path.to_path_buf(),
        source: e,
    })?;
    let groups = ParallelGroups::from_jsonl(&text, groups_path)?;
    let report = parallel_doc_analysis(&run, &groups, depth)?;
    m.config = serde_json::json!({ "depth": depth });
    create_dir(out)?;
    let chart = parallel_chart(&report);
    write_file(
        &out.join("parallel.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    write_file(&out.join("parallel.txt"), report.to_text())?;
    write_file(&out.join("chart.json"), serde_json::to_string_pretty(&chart)? + "\n")?;
    write_file(&out.join("chart.svg"), to_svg(&chart))?;
    print!("{}", report.to_text());
    for f in ["parallel.json", "parallel.txt", "chart.json", "chart.svg"] {
        m.output(out, f)?;
    }
    m.write(out)
}

fn cmd_zeroshot(ckpt: &Path, new_lang: &str, out: &Path, args: &[String]) -> Result<()> {
    let mut m = RunManifest::new("zeroshot", args);
    m.input(ckpt)?;
    let mut model = at(ckpt, checkpoint::load(ckpt))?;
    model.add_zero_shot_language(new_lang)?;
    m.config = serde_json::json!({ "new_lang": new_lang });
    create_dir(out)?;
    checkpoint::save(&model, &out.join("model.spd"))?;
    m.checkpoint_sha256 = Some(m.output(out, "model.spd")?);
    m.write(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_biased_split(
    qrels_path: &Path,
    groups_path: &Path,
    languages: &[String],
    fraction: f64,
    seed: u64,
    out: &Path,
    args: &[String],
) -> Result<()> {
    let mut m = RunManifest::new("biased-split", args);
    m.input(qrels_path)?;
    m.input(groups_path)?;
    let qrels = load_qrels(qrels_path)?;
    let text = std::fs::read_to_string(groups_path).map_err(|e| Error::Io {
        path: groups_path.to_path_buf(),
        source: e,
    })?;
    let groups = ParallelGroups::from_jsonl(&text, groups_path)?;
    let split = biased_relevance_split(&qrels, &groups, languages, fraction, seed)?;
    m.config = serde_json::json!({ "languages": languages, "fraction": fraction });
    m.seeds.insert("split".into(), seed);
    create_dir(out)?;
    write_qrels(&out.join("qrels.txt"), &split)?;
    m.output(out, "qrels.txt")?;
    m.write(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifests_do_not_record_the_output_directory() {
        let args: Vec<String> = ["eval", "--out", "a", "--run", "r", "--out=b"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(strip_out(&args), ["eval", "--run", "r"]);
    }

    #[test]
    fn train_file_fills_defaults_and_rejects_unknown_fields() {
        let f: TrainFile = serde_json::from_str(r#"{"schema": 1, "model": {"variant": "utspd"}}"#).unwrap();
        assert_eq!(f.model.variant, Variant::Utspd);
        assert_eq!(f.model.dim, 32);
        assert_eq!(f.train, TrainConfig::default());
        assert!(serde_json::from_str::<TrainFile>(r#"{"schema": 1, "modle": {}}"#).is_err());
        assert!(serde_json::from_str::<TrainFile>(r#"{"schema": 1, "model": {"dims": 8}}"#).is_err());
    }
}
