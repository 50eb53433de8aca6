use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use finsent_core::analysis::{self, StopwordList};
use finsent_core::augment::{augment_dataset, AugmentConfig, InsertionSource, SynonymLexicon};
use finsent_core::corpus::{
    class_counts, parse_corpus, stratified_split, to_csv, upsample, CorpusFormat, TextEncoding,
};
use finsent_core::encoder::{
    encode_dataset, encoder_vocab_size, evaluate as encoder_eval, train_loop, write_trace_csv, AdamWConfig, AdapterSet,
    AdapterTarget, EncoderCheckpoint, EncoderClassifier, EncoderConfig, EncoderParams, TrainConfig, TrainMode,
};
use finsent_core::features::{build_vocabulary, embed_mean, tfidf, tfidf_texts, tokenize, EmbeddingTable, Vocabulary};
use finsent_core::linear::{self, LinearHyper, LinearParams};
use finsent_core::metrics::{self, confusion, render_table, report, EvalReport};
use finsent_core::promptkit::{
    predict_sentiments, EchoBackend, EncoderBackend, GenConfig, GenerationBackend, HttpBackend, NoLabelPolicy,
    OracleBackend, PredictError, PredictOptions, Predictions, PromptTemplate, RetryPolicy, UnparseableBackend,
};
use finsent_core::{Dataset, SentimentLabel};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::*;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::Run;

pub const SAMPLE_CORPUS: &[u8] = include_bytes!("../data/sample_corpus.csv");

/// What a command prints: a human summary and the same facts as JSON.
pub struct Outcome {
    pub text: String,
    pub json: Value,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn out_dir(flag: &Option<PathBuf>, cfg: &RunConfig, command: &str) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| cfg.paths.output_dir.as_ref().map(|d| d.join(command)))
        .ok_or_else(|| config_err("no output directory: pass --out or set paths.output_dir"))
}

fn parse_flag<T: std::str::FromStr<Err = String>>(value: Option<&str>, key: &str) -> Result<Option<T>, CliError> {
    value.map(|v| v.parse().map_err(|e| config_err(format!("{key}: {e}")))).transpose()
}

/// Reads a corpus written by this tool (`sentiment,headline`, UTF-8).
fn read_dataset(run: &mut Run, path: &Path) -> Result<Dataset, CliError> {
    let bytes = run.read_input(path)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut ds = parse_corpus(&bytes, CorpusFormat::CsvHeadered, TextEncoding::Utf8)?;
    ds.provenance = name;
    Ok(ds)
}

fn counts_json(ds: &Dataset) -> Value {
    let c = class_counts(ds);
    json!({"positive": c[0], "neutral": c[1], "negative": c[2]})
}

fn counts_text(ds: &Dataset) -> String {
    let c = class_counts(ds);
    format!("{} records (positive {}, neutral {}, negative {})", ds.len(), c[0], c[1], c[2])
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

pub fn ingest(a: &IngestArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut run = Run::new(&out_dir(&a.out, cfg, "ingest")?, "ingest")?;
    let format = parse_flag::<CorpusFormat>(a.format.as_deref().or(cfg.corpus.format.as_deref()), "format")?
        .unwrap_or(CorpusFormat::CsvLabelFirst);
    let encoding = parse_flag::<TextEncoding>(a.encoding.as_deref().or(cfg.corpus.encoding.as_deref()), "encoding")?
        .unwrap_or(TextEncoding::Utf8);
    let (bytes, format, encoding) = if a.sample {
        run.record_input("sample_corpus.csv", SAMPLE_CORPUS);
        (SAMPLE_CORPUS.to_vec(), CorpusFormat::CsvLabelFirst, TextEncoding::Utf8)
    } else {
        let path = a
            .input
            .clone()
            .or_else(|| cfg.paths.data.clone())
            .ok_or_else(|| config_err("no corpus: pass --input, --sample or set paths.data"))?;
        (run.read_input(&path)?, format, encoding)
    };
    let ds = parse_corpus(&bytes, format, encoding)?;
    run.set_parameters(json!({"format": format, "encoding": encoding, "sample": a.sample}))?;
    run.write("corpus.csv", to_csv(&ds)?)?;
    run.finish()?;
    Ok(Outcome {
        text: format!("ingested {}\n", counts_text(&ds)),
        json: json!({"records": ds.len(), "class_counts": counts_json(&ds)}),
    })
}

pub fn split(a: &SplitArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut run = Run::new(&out_dir(&a.out, cfg, "split")?, "split")?;
    let ds = read_dataset(&mut run, &a.input)?;
    let train_n = a.train.or(cfg.split.train).unwrap_or(300);
    let test_n = a.test.or(cfg.split.test).unwrap_or(300);
    let seed = a.seed.unwrap_or(cfg.seed());
    let (train, test) = stratified_split(&ds, train_n, test_n, seed)?;
    run.set_parameters(json!({"train": train_n, "test": test_n}))?;
    run.seed("split", seed);
    run.write("train.csv", to_csv(&train)?)?;
    run.write("test.csv", to_csv(&test)?)?;
    run.finish()?;
    Ok(Outcome {
        text: format!("train: {}\ntest:  {}\n", counts_text(&train), counts_text(&test)),
        json: json!({"train": counts_json(&train), "test": counts_json(&test)}),
    })
}

pub fn upsample_cmd(a: &UpsampleArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut run = Run::new(&out_dir(&a.out, cfg, "upsample")?, "upsample")?;
    let ds = read_dataset(&mut run, &a.input)?;
    let target = a.target.or(cfg.upsample.target).unwrap_or_else(|| class_counts(&ds).into_iter().max().unwrap_or(0));
    let seed = a.seed.unwrap_or(cfg.seed());
    let out = upsample(&ds, target, seed)?;
    run.set_parameters(json!({"target": target}))?;
    run.seed("upsample", seed);
    run.write("upsampled.csv", to_csv(&out)?)?;
    run.finish()?;
    Ok(Outcome {
        text: format!("upsampled to {}\n", counts_text(&out)),
        json: json!({"records": out.len(), "class_counts": counts_json(&out)}),
    })
}

pub fn augment(a: &AugmentArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut run = Run::new(&out_dir(&a.out, cfg, "augment")?, "augment")?;
    let ds = read_dataset(&mut run, &a.input)?;
    let lexicon = match a.lexicon.clone().or_else(|| cfg.paths.lexicon.clone()) {
        Some(p) => {
            let bytes = run.read_input(&p)?;
            SynonymLexicon::parse(&String::from_utf8_lossy(&bytes))?
        }
        None => SynonymLexicon::bundled(),
    };
    let c = &cfg.augment;
    let defaults = AugmentConfig::default();
    let insertion = match a.insertion.as_deref().or(c.insertion.as_deref()) {
        None | Some("synonym") => InsertionSource::Synonym,
        Some("uniform_lexicon") => InsertionSource::UniformLexicon,
        Some(other) => return Err(config_err(format!("insertion: unknown source {other:?}"))),
    };
    let config = AugmentConfig {
        n_replace: a.n_replace.or(c.n_replace).unwrap_or(defaults.n_replace),
        n_insert: a.n_insert.or(c.n_insert).unwrap_or(defaults.n_insert),
        p_delete: a.p_delete.or(c.p_delete).unwrap_or(defaults.p_delete),
        n_swap: a.n_swap.or(c.n_swap).unwrap_or(defaults.n_swap),
        copies_per_record: a.copies.or(c.copies).unwrap_or(defaults.copies_per_record),
        seed: a.seed.unwrap_or(cfg.seed()),
        insertion,
    };
    config.validate()?;
    let out = augment_dataset(&ds, &config, &lexicon)?;
    run.set_parameters(&config)?;
    run.seed("augment", config.seed);
    run.write("augmented.csv", to_csv(&out)?)?;
    run.finish()?;
    Ok(Outcome {
        text: format!("augmented to {}\n", counts_text(&out)),
        json: json!({"records": out.len(), "class_counts": counts_json(&out)}),
    })
}

pub fn analyze(a: &AnalyzeArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut run = Run::new(&out_dir(&a.out, cfg, "analyze")?, "analyze")?;
    let ds = read_dataset(&mut run, &a.input)?;
    let stopwords = match a.stopwords.clone().or_else(|| cfg.paths.stopwords.clone()) {
        Some(p) => StopwordList::parse(&String::from_utf8_lossy(&run.read_input(&p)?)),
        None => StopwordList::bundled(),
    };
    let top_k = a.top_k.or(cfg.analyze.top_k).unwrap_or(20);
    if top_k == 0 {
        return Err(config_err("top_k must be at least 1"));
    }
    let fig = analysis::figure_data(&ds, top_k, &stopwords)?;
    let keywords = analysis::keyword_frequencies(&ds, top_k, &stopwords)?;
    run.set_parameters(json!({"top_k": top_k, "stopwords": stopwords.len()}))?;
    run.write("figure_data.json", serde_json::to_string_pretty(&fig)? + "\n")?;
    run.write("class_distribution.json", serde_json::to_string_pretty(&fig.class_distribution)? + "\n")?;
    run.write("correlations.csv", fig.correlation.to_csv(&analysis::FEATURE_NAMES))?;
    run.write("keywords.csv", analysis::keywords_to_csv(&keywords))?;
    run.finish()?;

    let mut text = String::from("Class      Count  Share\n");
    for (i, label) in SentimentLabel::ALL.iter().enumerate() {
        let _ = writeln!(
            text,
            "{:<10} {:>5}  {:>5.1}%",
            label.as_str(),
            fig.class_distribution.counts[i],
            100.0 * fig.class_distribution.proportions[i]
        );
    }
    for (label, words) in SentimentLabel::ALL.iter().zip(&keywords) {
        let top: Vec<String> = words.iter().take(5).map(|(w, c)| format!("{w} ({c})")).collect();
        let _ = writeln!(text, "top {}: {}", label.as_str(), top.join(", "));
    }
    Ok(Outcome { text, json: serde_json::to_value(&fig)? })
}

pub fn featurize(a: &FeaturizeArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut run = Run::new(&out_dir(&a.out, cfg, "featurize")?, "featurize")?;
    let ds = read_dataset(&mut run, &a.input)?;
    let min_df = a.min_df.or(cfg.features.min_df).unwrap_or(1);
    let max_vocab = a.max_vocab.or(cfg.features.max_vocab);
    let vocab = build_vocabulary(&ds, min_df, max_vocab)?;
    run.write("vocabulary.json", serde_json::to_string_pretty(&vocab)? + "\n")?;

    let embeddings = match a.embeddings.clone().or_else(|| cfg.paths.embeddings.clone()) {
        Some(p) => Some(EmbeddingTable::read(BufReader::new(&run.read_input(&p)?[..]))?),
        None => None,
    };
    let mut sets = vec![(stem(&a.input), ds)];
    for p in &a.apply {
        sets.push((stem(p), read_dataset(&mut run, p)?));
    }
    let mut shapes = serde_json::Map::new();
    for (name, set) in &sets {
        let m = tfidf(set, &vocab)?;
        let mut buf = Vec::new();
        m.write_triplets(&mut buf)?;
        run.write(&format!("tfidf_{name}.csv"), buf)?;
        shapes.insert(name.clone(), json!({"rows": m.n_rows(), "cols": m.n_cols}));
        if let Some(table) = &embeddings {
            let mut csv = String::from("row,coverage");
            for j in 0..table.dim() {
                let _ = write!(csv, ",e{j}");
            }
            csv.push('\n');
            for (i, text) in set.texts().enumerate() {
                let (v, cov) = embed_mean(&tokenize(text), table);
                let _ = write!(csv, "{i},{cov}");
                v.iter().for_each(|x| {
                    let _ = write!(csv, ",{x}");
                });
                csv.push('\n');
            }
            run.write(&format!("embed_{name}.csv"), csv)?;
        }
    }
    run.set_parameters(json!({"min_df": min_df, "max_vocab": max_vocab, "matrices": shapes}))?;
    run.finish()?;
    Ok(Outcome {
        text: format!("vocabulary of {} tokens; {} matrices written\n", vocab.len(), sets.len()),
        json: json!({"vocabulary": vocab.len(), "matrices": shapes}),
    })
}

/// A linear model together with the vocabulary its features come from.
#[derive(Serialize, Deserialize)]
struct LinearBundle {
    format: String,
    version: u32,
    vocabulary: Vocabulary,
    model: Value,
}

const LINEAR_BUNDLE: &str = "finsent-linear-bundle";

pub fn train_linear(a: &TrainLinearArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut run = Run::new(&out_dir(&a.out, cfg, "train-linear")?, "train-linear")?;
    let train = read_dataset(&mut run, &a.train)?;
    let min_df = a.min_df.or(cfg.features.min_df).unwrap_or(1);
    let max_vocab = a.max_vocab.or(cfg.features.max_vocab);
    let vocab = build_vocabulary(&train, min_df, max_vocab)?;
    let c = &cfg.linear;
    let d = LinearHyper::default();
    let hyper = LinearHyper {
        lr: a.lr.or(c.lr).unwrap_or(d.lr),
        epochs: a.epochs.or(c.epochs).unwrap_or(d.epochs),
        batch_size: a.batch_size.or(c.batch_size).unwrap_or(d.batch_size),
        l2: a.l2.or(c.l2).unwrap_or(d.l2),
        seed: a.seed.unwrap_or(cfg.seed()),
    };
    let x = tfidf(&train, &vocab)?;
    let (params, trace) = linear::train(&x, &train.labels(), &hyper)?;
    let train_acc = linear::accuracy(&params, &x, &train.labels())?;
    let eval_acc = match &a.eval {
        Some(p) => {
            let ev = read_dataset(&mut run, p)?;
            Some(linear::accuracy(&params, &tfidf(&ev, &vocab)?, &ev.labels())?)
        }
        None => None,
    };
    let bundle = LinearBundle {
        format: LINEAR_BUNDLE.into(),
        version: 1,
        vocabulary: vocab.clone(),
        model: serde_json::from_str(&params.to_json()?)?,
    };
    let mut trace_csv = String::from("epoch,loss\n");
    for (e, l) in trace.iter().enumerate() {
        let _ = writeln!(trace_csv, "{},{l}", e + 1);
    }
    run.set_parameters(json!({"hyper": hyper, "min_df": min_df, "max_vocab": max_vocab}))?;
    run.seed("linear", hyper.seed);
    run.write("linear_model.json", serde_json::to_string(&bundle)? + "\n")?;
    run.write("loss_trace.csv", trace_csv)?;
    run.finish()?;
    let mut text = format!("vocabulary {} tokens, train accuracy {train_acc:.3}\n", vocab.len());
    if let Some(acc) = eval_acc {
        let _ = writeln!(text, "eval accuracy {acc:.3}");
    }
    Ok(Outcome {
        text,
        json: json!({"vocabulary": vocab.len(), "train_accuracy": train_acc, "eval_accuracy": eval_acc,
                     "final_loss": trace.last()}),
    })
}

fn adapter_targets(a: &TrainEncoderArgs, cfg: &RunConfig) -> Result<Vec<AdapterTarget>, CliError> {
    let names: Vec<String> = if !a.targets.is_empty() {
        a.targets.clone()
    } else {
        cfg.encoder.targets.clone().unwrap_or_else(|| vec!["query".into(), "value".into(), "head".into()])
    };
    names.iter().map(|t| t.parse().map_err(|e: String| config_err(format!("targets: {e}")))).collect()
}

pub fn train_encoder(a: &TrainEncoderArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut run = Run::new(&out_dir(&a.out, cfg, "train-encoder")?, "train-encoder")?;
    let train = read_dataset(&mut run, &a.train)?;
    let seed = a.seed.unwrap_or(cfg.seed());
    let e = &cfg.encoder;

    let (config, mut params, vocab) = match &a.base {
        Some(path) => {
            let bytes = run.read_input(path)?;
            let ckpt = EncoderCheckpoint::from_json(&String::from_utf8_lossy(&bytes))?;
            let clf = EncoderClassifier::from_checkpoint(&ckpt)?;
            let params = match &clf.adapters {
                Some(set) => set.merged(&clf.params)?,
                None => clf.params,
            };
            (clf.config, params, clf.vocabulary)
        }
        None => {
            let min_df = a.min_df.or(cfg.features.min_df).unwrap_or(1);
            let vocab = build_vocabulary(&train, min_df, a.max_vocab.or(cfg.features.max_vocab))?;
            let config = EncoderConfig {
                vocab_size: encoder_vocab_size(&vocab),
                d_model: a.d_model.or(e.d_model).unwrap_or(32),
                n_heads: a.n_heads.or(e.n_heads).unwrap_or(4),
                d_ff: a.d_ff.or(e.d_ff).unwrap_or(64),
                n_layers: a.n_layers.or(e.n_layers).unwrap_or(1),
                max_seq_len: a.max_seq_len.or(e.max_seq_len).unwrap_or(24),
                n_classes: 3,
                layernorm_eps: 1e-5,
            };
            config.validate()?;
            let scale = a.init_scale.or(e.init_scale).unwrap_or(1.0);
            let params = EncoderParams::init_scaled(&config, seed, scale)?;
            (config, params, vocab)
        }
    };

    let t = &cfg.train;
    let td = TrainConfig::default();
    let od = AdamWConfig::default();
    let tc = TrainConfig {
        epochs: a.epochs.or(t.epochs).unwrap_or(td.epochs),
        per_device_batch: a.per_device_batch.or(t.per_device_batch).unwrap_or(td.per_device_batch),
        grad_accum_steps: a.grad_accum_steps.or(t.grad_accum_steps).unwrap_or(td.grad_accum_steps),
        base_lr: a.lr.or(t.base_lr).unwrap_or(td.base_lr),
        warmup_ratio: a.warmup_ratio.or(t.warmup_ratio).unwrap_or(td.warmup_ratio),
        seed,
        optimizer: AdamWConfig {
            beta1: t.beta1.unwrap_or(od.beta1),
            beta2: t.beta2.unwrap_or(od.beta2),
            eps: t.eps.unwrap_or(od.eps),
            weight_decay: a.weight_decay.or(t.weight_decay).unwrap_or(od.weight_decay),
        },
    };
    tc.validate()?;

    let mode = if a.peft { TrainMode::Peft } else { TrainMode::Full };
    let mut adapters = if a.peft {
        let rank = a.rank.or(e.rank).unwrap_or(4);
        let alpha = a.alpha.or(e.alpha).unwrap_or(8.0);
        Some(AdapterSet::new(&config, &adapter_targets(a, cfg)?, rank, alpha, seed)?)
    } else {
        None
    };

    let examples = encode_dataset(&train, &vocab, config.max_seq_len);
    let eval = match &a.eval {
        Some(p) => Some(encode_dataset(&read_dataset(&mut run, p)?, &vocab, config.max_seq_len)),
        None => None,
    };
    let base_params = params.n_parameters();
    let report = train_loop(&examples, &mut params, adapters.as_mut(), &config, &tc, mode, eval.as_deref())?;
    let final_train = encoder_eval(&params, adapters.as_ref(), &examples, &config)?;
    let train_acc = final_train.correct as f64 / final_train.count as f64;
    let eval_acc = report.epochs.last().and_then(|s| s.val.map(|(_, acc)| acc));

    let clf = EncoderClassifier::new(config.clone(), params, adapters, vocab)?;
    let mut trace = Vec::new();
    write_trace_csv(&report.trace, &mut trace)?;
    run.set_parameters(json!({
        "model": config,
        "train": tc,
        "mode": mode,
        "adapter_targets": clf.adapters.as_ref().map(|s| s.entries.iter().map(|(slot, _)| slot.to_string()).collect::<Vec<_>>()),
    }))?;
    run.seed("encoder", seed);
    run.write("encoder.json", clf.to_checkpoint()?.to_json()? + "\n")?;
    if a.merged {
        let set = clf.adapters.as_ref().ok_or_else(|| config_err("--merged needs --peft adapters to merge"))?;
        let merged = EncoderCheckpoint::merged(&clf.config, &clf.params, set, Some(&clf.vocabulary))?;
        run.write("encoder_merged.json", merged.to_json()? + "\n")?;
    }
    run.write("trace.csv", trace)?;
    run.finish()?;

    let trainable = clf.adapters.as_ref().map_or(base_params, AdapterSet::n_parameters);
    let mut text = format!(
        "{} steps, {trainable} trainable of {base_params} base parameters, train accuracy {train_acc:.3}\n",
        report.total_steps
    );
    if let Some(acc) = eval_acc {
        let _ = writeln!(text, "eval accuracy {acc:.3}");
    }
    Ok(Outcome {
        text,
        json: json!({"steps": report.total_steps, "trainable_parameters": trainable, "base_parameters": base_params,
                     "train_accuracy": train_acc, "eval_accuracy": eval_acc}),
    })
}

fn model_format(bytes: &[u8]) -> Result<String, CliError> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| CliError::Data(format!("model file: {e}")))?;
    v.get("format")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| CliError::Data("model file has no format field".into()))
}

fn template(cfg: &RunConfig) -> PromptTemplate {
    let d = PromptTemplate::default();
    PromptTemplate {
        instruction: cfg.prompt.instruction.clone().unwrap_or(d.instruction),
        answer_marker: cfg.prompt.answer_marker.clone().unwrap_or(d.answer_marker),
        allowed_labels: cfg.prompt.labels.clone().unwrap_or(d.allowed_labels),
    }
}

fn predictions_csv(ds: &Dataset, preds: &Predictions) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "headline", "predicted", "generated", "error"])
        .map_err(|e| CliError::Data(e.to_string()))?;
    for (i, (rec, p)) in ds.records.iter().zip(&preds.records).enumerate() {
        let label = p.label.map_or("no_label", SentimentLabel::as_str);
        w.write_record([
            i.to_string().as_str(),
            &rec.text,
            label,
            p.generated.as_deref().unwrap_or(""),
            p.error.as_deref().unwrap_or(""),
        ])
        .map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

pub fn predict(a: &PredictArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut run = Run::new(&out_dir(&a.out, cfg, "predict")?, "predict")?;
    let ds = read_dataset(&mut run, &a.input)?;
    let model = match &a.model {
        Some(p) => Some(run.read_input(p)?),
        None => None,
    };
    let b = &cfg.backend;
    let kind = match a.backend.clone().or_else(|| b.kind.clone()) {
        Some(k) => k,
        None => match &model {
            Some(bytes) => match model_format(bytes)?.as_str() {
                LINEAR_BUNDLE => "linear".into(),
                _ => "encoder".into(),
            },
            None => return Err(config_err("no backend: pass --backend or --model")),
        },
    };
    let template = template(cfg);
    template.validate()?;
    let no_label = match a.no_label.as_deref().or(b.no_label.as_deref()) {
        None | Some("count_as_error") => NoLabelPolicy::CountAsError,
        Some(word) => NoLabelPolicy::MapTo(word.parse().map_err(|e: String| config_err(format!("no_label: {e}")))?),
    };
    let options = PredictOptions {
        gen: GenConfig {
            max_new_tokens: a.max_new_tokens.or(b.max_new_tokens).unwrap_or(4),
            temperature: a.temperature.or(b.temperature).unwrap_or(0.0),
        },
        no_label,
        retry: RetryPolicy {
            attempts: a.attempts.or(b.attempts).unwrap_or(3),
            initial_backoff: Duration::from_millis(a.backoff_ms.or(b.backoff_ms).unwrap_or(200)),
            multiplier: 2.0,
        },
        concurrency: a.concurrency.or(b.concurrency).unwrap_or(4),
    };
    let need_model = || model.as_deref().ok_or_else(|| config_err(format!("backend {kind} needs --model")));

    let result: Result<Predictions, PredictError> = if kind == "linear" {
        let bundle: LinearBundle = serde_json::from_slice(need_model()?)?;
        if bundle.format != LINEAR_BUNDLE {
            return Err(CliError::Data(format!("not a linear model bundle: {}", bundle.format)));
        }
        let params = LinearParams::from_json(&bundle.model.to_string())?;
        let x = tfidf_texts(ds.texts(), &bundle.vocabulary)?;
        let records = x
            .rows
            .iter()
            .map(|row| {
                let label = params.predict(row)?;
                Ok(finsent_core::promptkit::PredictionRecord {
                    generated: Some(label.as_str().to_string()),
                    label: Some(label),
                    extracted: Some(label),
                    attempts: 1,
                    error: None,
                })
            })
            .collect::<finsent_core::Result<Vec<_>>>()?;
        Ok(Predictions { records, no_label: 0 })
    } else {
        let backend: Box<dyn GenerationBackend> = match kind.as_str() {
            "encoder" => {
                let ckpt = EncoderCheckpoint::from_json(&String::from_utf8_lossy(need_model()?))?;
                Box::new(EncoderBackend {
                    classifier: EncoderClassifier::from_checkpoint(&ckpt)?,
                    template: template.clone(),
                })
            }
            "echo" => Box::new(EchoBackend(
                a.echo_text
                    .clone()
                    .or_else(|| b.echo_text.clone())
                    .ok_or_else(|| config_err("echo backend needs --echo-text"))?,
            )),
            "unparseable" => Box::new(UnparseableBackend),
            "oracle" => Box::new(OracleBackend::new(&ds, &template)?),
            "http" => Box::new(HttpBackend::new(
                b.http.clone().ok_or_else(|| config_err("http backend needs a [backend.http] section"))?,
            )?),
            other => return Err(config_err(format!("unknown backend {other:?}"))),
        };
        predict_sentiments(&ds, backend.as_ref(), &template, &options)
    };

    run.set_parameters(json!({"backend": kind, "template": template, "options": options}))?;
    let (preds, failure) = match result {
        Ok(p) => (p, None),
        Err(PredictError::Aborted { partial, .. }) => {
            let msg = format!("{} records failed", partial.failures().len());
            (*partial, Some(msg))
        }
        Err(e) => return Err(e.into()),
    };
    run.write("predictions.csv", predictions_csv(&ds, &preds)?)?;
    run.finish()?;
    if let Some(msg) = failure {
        return Err(CliError::Backend(format!("{msg}; partial predictions written")));
    }
    let counts = SentimentLabel::ALL.map(|l| preds.records.iter().filter(|r| r.label == Some(l)).count());
    Ok(Outcome {
        text: format!(
            "{} predictions via {kind} (positive {}, neutral {}, negative {}, no label {})\n",
            preds.records.len(),
            counts[0],
            counts[1],
            counts[2],
            preds.no_label
        ),
        json: json!({"backend": kind, "records": preds.records.len(), "no_label": preds.no_label,
                     "predicted": {"positive": counts[0], "neutral": counts[1], "negative": counts[2]}}),
    })
}

fn read_predictions(bytes: &[u8]) -> Result<Vec<(String, Option<SentimentLabel>)>, CliError> {
    let mut r = csv::Reader::from_reader(bytes);
    let headers = r.headers().map_err(|e| CliError::Data(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("predictions file has no {name} column")))
    };
    let (h, p) = (col("headline")?, col("predicted")?);
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
            let label = match &rec[p] {
                "no_label" => None,
                word => {
                    Some(word.parse().map_err(|e: String| CliError::Data(format!("predictions row {}: {e}", i + 1)))?)
                }
            };
            Ok((rec[h].to_string(), label))
        })
        .collect()
}

fn round_report(v: &mut Value, decimals: u32) {
    match v {
        Value::Number(n) if n.is_f64() => {
            *v = json!(metrics::round_half_up(n.as_f64().unwrap_or(0.0), decimals));
        }
        Value::Array(a) => a.iter_mut().for_each(|x| round_report(x, decimals)),
        Value::Object(m) => m.values_mut().for_each(|x| round_report(x, decimals)),
        _ => {}
    }
}

pub fn evaluate(a: &EvaluateArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut run = Run::new(&out_dir(&a.out, cfg, "evaluate")?, "evaluate")?;
    let gold = read_dataset(&mut run, &a.gold)?;
    let preds = read_predictions(&run.read_input(&a.predictions)?)?;
    if preds.len() != gold.len() {
        return Err(CliError::Data(format!("{} predictions for {} gold records", preds.len(), gold.len())));
    }
    if let Some(i) = gold.records.iter().zip(&preds).position(|(g, (h, _))| g.text != *h) {
        return Err(CliError::Data(format!("row {}: prediction headline does not match the gold file", i + 1)));
    }
    let labels: Vec<Option<SentimentLabel>> = preds.into_iter().map(|(_, l)| l).collect();
    let r = report(&confusion(&gold.labels(), &labels)?);
    let decimals = a.decimals.or(cfg.metrics.decimals).unwrap_or(3);
    run.set_parameters(json!({"decimals": decimals}))?;
    run.write("report.json", r.to_json()? + "\n")?;
    run.write("confusion.csv", r.confusion.to_csv())?;
    let table = render_table(&r);
    run.write("report.txt", &table)?;
    run.finish()?;
    let mut summary = serde_json::to_value(&r)?;
    round_report(&mut summary, decimals);
    Ok(Outcome { text: table, json: summary })
}

pub fn compare_cmd(a: &CompareArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    if a.reports.is_empty() {
        return Err(config_err("compare needs at least one --report NAME=PATH"));
    }
    let mut run = Run::new(&out_dir(&a.out, cfg, "compare")?, "compare")?;
    let mut reports = Vec::new();
    for spec in &a.reports {
        let (name, path) =
            spec.split_once('=').ok_or_else(|| config_err(format!("--report {spec:?}: expected NAME=PATH")))?;
        let bytes = run.read_input(Path::new(path))?;
        let r: EvalReport = serde_json::from_slice(&bytes)?;
        reports.push((name.to_string(), r));
    }
    let table = metrics::compare(&reports);
    let rows: Vec<Value> =
        reports.iter().map(|(n, r)| json!({"model": n, "macro_avg": r.macro_avg, "accuracy": r.accuracy})).collect();
    run.set_parameters(json!({"models": reports.iter().map(|(n, _)| n).collect::<Vec<_>>()}))?;
    run.write("comparison.txt", &table)?;
    run.write("comparison.json", serde_json::to_string_pretty(&rows)? + "\n")?;
    run.finish()?;
    Ok(Outcome { text: table, json: Value::Array(rows) })
}
