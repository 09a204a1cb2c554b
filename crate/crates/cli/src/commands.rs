use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use dda_core::channel::lattice::WireCandidate;
use dda_core::corpus::{load_manifest, tokenize, ManifestFormat};
use dda_core::decoder::{lambda_sweep, DecodeCase};
use dda_core::eval::UtteranceScore;
use dda_core::pipeline::{summarize, trajectories_from_jsonl, PipelineConfig};
use dda_core::report::{compute_deltas, render, severity_table, trajectory_table, ResultsTable};
use dda_core::{
    aggregate, align, decode, ngram_coverage, paired_permutation_test, run_stepwise, select_covering_set, Backend,
    Corpus, CoverageSpec, ExternalBackend, FusionConfig, Grouping, Lattice, NGramLM, Normalization, RecognitionRequest,
    SimulatedBackend, SplitTag, Weighting,
};
use serde_json::{json, Value};

use crate::{Cli, Command, CoverageOpts, TextOpts};

impl TextOpts {
    fn normalization(&self) -> Normalization {
        Normalization {
            lowercase: !self.keep_case,
            strip_punctuation: !self.keep_punctuation,
        }
    }

    fn tokens(&self, text: &str) -> Option<Vec<String>> {
        tokenize(&self.normalization().apply(text), self.unit)
    }

    fn corpus(&self, path: &Path) -> Result<Corpus> {
        load_manifest(path, ManifestFormat::from_path(path), self.unit, self.normalization())
            .with_context(|| format!("loading manifest {}", path.display()))
    }
}

impl CoverageOpts {
    fn spec(&self) -> dda_core::Result<CoverageSpec> {
        CoverageSpec::new(self.orders.clone(), self.weights.clone())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(dda_core::Error::from)
        .with_context(|| format!("reading {}", path.display()))
}

/// Non-empty lines, each tokenized.
fn read_texts(path: &Path, text: &TextOpts) -> Result<Vec<Vec<String>>> {
    Ok(read(path)?.lines().filter_map(|l| text.tokens(l)).collect())
}

/// `id<TAB>text` lines, in file order.
fn read_tsv(path: &Path, text: &TextOpts) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (i, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = line.split_once('\t').unwrap_or((line, ""));
        if id.is_empty() {
            return Err(dda_core::Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                message: "missing utterance id".into(),
            }
            .into());
        }
        out.push((id.to_owned(), text.tokens(body).unwrap_or_default()));
    }
    Ok(out)
}

fn emit(cli: &Cli, body: &str) -> Result<()> {
    match &cli.out {
        Some(path) => fs::write(path, body)
            .map_err(dda_core::Error::from)
            .with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn emit_json(cli: &Cli, value: &Value) -> Result<()> {
    emit(cli, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for item in items {
        // Round-trip through Value so object keys come out sorted.
        out.push_str(&serde_json::to_string(&serde_json::to_value(item)?)?);
        out.push('\n');
    }
    Ok(out)
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_json(&read(path)?).with_context(|| format!("config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn parse_grouping(s: &str) -> Result<Grouping> {
    Ok(match s {
        "speaker" => Grouping::Speaker,
        "severity" => Grouping::Severity,
        "overall" => Grouping::Overall,
        _ => return Err(dda_core::Error::InvalidConfig(format!("unknown grouping `{s}`")).into()),
    })
}

fn parse_weighting(s: &str) -> Result<Weighting> {
    Ok(match s {
        "speaker" => Weighting::Speaker,
        "utterance" => Weighting::Utterance,
        _ => return Err(dda_core::Error::InvalidConfig(format!("unknown weighting `{s}`")).into()),
    })
}

#[derive(serde::Deserialize)]
struct LatticeRecord {
    utterance_id: String,
    #[serde(default)]
    reference_len: usize,
    lattice: Vec<Vec<WireCandidate>>,
}

fn read_lattices(path: &Path) -> Result<Vec<Lattice>> {
    let mut out = Vec::new();
    for (i, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LatticeRecord = serde_json::from_str(line)
            .map_err(dda_core::Error::from)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let (lat, warnings) =
            Lattice::normalized(rec.utterance_id, rec.reference_len, Lattice::steps_from_wire(rec.lattice))?;
        for w in warnings {
            log::warn!("{w}");
        }
        out.push(lat);
    }
    Ok(out)
}

fn make_backend(spec: &str, corpus: &Corpus, cfg: &PipelineConfig, pool: usize, timeout: u64, unit: dda_core::Unit) -> Result<Box<dyn Backend>> {
    let timeout = Duration::from_secs(timeout);
    if spec == "sim" {
        return Ok(Box::new(SimulatedBackend::new(
            corpus,
            &cfg.rate_table(),
            cfg.adaptation_gains,
            cfg.seed,
        )?));
    }
    if let Some(cmd) = spec.strip_prefix("cmd:") {
        let mut parts = cmd.split_whitespace().map(String::from);
        let Some(program) = parts.next() else {
            bail!(dda_core::Error::InvalidConfig("empty backend command".into()));
        };
        let args: Vec<String> = parts.collect();
        return Ok(Box::new(ExternalBackend::spawn(&program, &args, pool, timeout, unit)?));
    }
    if let Some(addr) = spec.strip_prefix("tcp:") {
        return Ok(Box::new(ExternalBackend::connect_tcp(addr, pool, timeout, unit)?));
    }
    Err(dda_core::Error::InvalidConfig(format!("unknown backend `{spec}` (expected sim, cmd:.. or tcp:..)")).into())
}

pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::LoadCheck { manifest, text } => {
            let corpus = text.corpus(manifest)?;
            let mut by_severity: BTreeMap<String, usize> = BTreeMap::new();
            for s in corpus.speakers().values() {
                *by_severity.entry(s.severity.to_string()).or_default() += 1;
            }
            let test = corpus.utterances().iter().filter(|u| u.split_tag == SplitTag::Test).count();
            let splits = dda_core::corpus::generate_loso_splits(&corpus).map(|s| s.len()).unwrap_or(0);
            emit_json(
                cli,
                &json!({
                    "utterances": corpus.len(),
                    "test_utterances": test,
                    "speakers": corpus.speakers().len(),
                    "speakers_by_severity": by_severity,
                    "vocabulary": corpus.vocabulary().len(),
                    "loso_splits": splits,
                    "unit": text.unit,
                }),
            )?;
        }
        Command::Coverage { pool, target, cov, text } => {
            let report = ngram_coverage(&read_texts(pool, text)?, &read_texts(target, text)?, &cov.spec()?)?;
            emit_json(cli, &report.to_json())?;
        }
        Command::Select {
            candidates,
            target,
            budget,
            cov,
            text,
        } => {
            let spec = cov.spec()?;
            let raw: Vec<String> = read(candidates)?.lines().map(String::from).collect();
            let (lines, cands): (Vec<&String>, Vec<Vec<String>>) =
                raw.iter().filter_map(|l| text.tokens(l).map(|t| (l, t))).unzip();
            let target = read_texts(target, text)?;
            let chosen = select_covering_set(&cands, &target, *budget, &spec)?;
            let picked: Vec<&Vec<String>> = chosen.iter().map(|&i| &cands[i]).collect();
            let report = ngram_coverage(&picked, &target, &spec)?;
            emit_json(
                cli,
                &json!({
                    "selected": chosen,
                    "texts": chosen.iter().map(|&i| lines[i]).collect::<Vec<_>>(),
                    "coverage": report.to_json(),
                }),
            )?;
        }
        Command::LmTrain {
            texts,
            manifest,
            order,
            k,
            text,
        } => {
            let data = match (texts, manifest) {
                (Some(path), _) => read_texts(path, text)?,
                (None, Some(path)) => text.corpus(path)?.utterances().iter().map(|u| u.tokens.clone()).collect(),
                (None, None) => unreachable!("clap requires one source"),
            };
            let lm = NGramLM::train(&data, *order, *k)?;
            emit(cli, &(serde_json::to_string(&lm.to_json())? + "\n"))?;
        }
        Command::Decode {
            lattices,
            lm,
            lambda,
            beam,
            sweep,
            refs,
            text,
        } => {
            let lm = NGramLM::from_json(serde_json::from_str(&read(lm)?).map_err(dda_core::Error::from)?)?;
            let lattices = read_lattices(lattices)?;
            let beam = (*beam > 0).then_some(*beam);
            if let Some(lambdas) = sweep {
                let refs: BTreeMap<String, Vec<String>> =
                    read_tsv(refs.as_deref().expect("clap requires refs"), text)?.into_iter().collect();
                let cases = lattices
                    .into_iter()
                    .map(|lattice| {
                        let reference = refs.get(&lattice.utterance_id).cloned().ok_or_else(|| {
                            dda_core::Error::InvalidConfig(format!("no reference for `{}`", lattice.utterance_id))
                        })?;
                        Ok(DecodeCase { lattice, reference })
                    })
                    .collect::<dda_core::Result<Vec<_>>>()?;
                let result = lambda_sweep(&cases, &lm, lambdas, beam)?;
                emit_json(cli, &serde_json::to_value(result)?)?;
            } else {
                let fusion = FusionConfig::new(*lambda, beam)?;
                let hyps = lattices
                    .iter()
                    .map(|l| decode(l, &lm, &fusion).map(|h| h.to_json(&l.utterance_id)))
                    .collect::<dda_core::Result<Vec<_>>>()?;
                emit(cli, &jsonl(hyps)?)?;
            }
        }
        Command::Simulate {
            manifest,
            setting,
            coverage,
            text,
        } => {
            let cfg = config(cli)?;
            let corpus = text.corpus(manifest)?;
            let backend = SimulatedBackend::new(&corpus, &cfg.rate_table(), cfg.adaptation_gains, cfg.seed)?;
            let mut records = Vec::new();
            for speaker in corpus.non_control_speakers() {
                for utt in corpus.utterances_of(&speaker.id).filter(|u| u.split_tag == SplitTag::Test) {
                    let lat = backend.lattice_for(&RecognitionRequest {
                        speaker,
                        utterance: utt,
                        setting: *setting,
                        coverage: *coverage,
                    })?;
                    records.push(json!({
                        "utterance_id": lat.utterance_id,
                        "reference_len": lat.reference_len,
                        "lattice": lat.to_wire(),
                    }));
                }
            }
            emit(cli, &jsonl(records)?)?;
        }
        Command::Align {
            reference,
            hyp,
            manifest,
            text,
        } => {
            let refs = read_tsv(reference, text)?;
            let hyps: BTreeMap<String, Vec<String>> = read_tsv(hyp, text)?.into_iter().collect();
            for id in hyps.keys() {
                if !refs.iter().any(|(r, _)| r == id) {
                    log::warn!("hypothesis `{id}` has no reference, ignored");
                }
            }
            let corpus = manifest.as_deref().map(|m| text.corpus(m)).transpose()?;
            let mut scores = Vec::with_capacity(refs.len());
            for (id, ref_tokens) in &refs {
                let hyp_tokens = hyps.get(id).cloned().unwrap_or_else(|| {
                    log::warn!("utterance `{id}` has no hypothesis, scored as empty");
                    Vec::new()
                });
                let speaker = corpus
                    .as_ref()
                    .and_then(|c| c.utterance(id))
                    .map(|u| u.speaker_id.clone())
                    .unwrap_or_default();
                scores.push(UtteranceScore::from_alignment(id, speaker, &align(ref_tokens, &hyp_tokens)));
            }
            emit(cli, &jsonl(scores)?)?;
        }
        Command::Stats {
            scores,
            manifest,
            grouping,
            weighting,
            compare,
            resamples,
            text,
        } => {
            let corpus = text.corpus(manifest)?;
            let load = |path: &Path| -> Result<Vec<UtteranceScore>> {
                let mut out: Vec<UtteranceScore> = Vec::new();
                for line in read(path)?.lines().filter(|l| !l.trim().is_empty()) {
                    let mut s: UtteranceScore = serde_json::from_str(line).map_err(dda_core::Error::from)?;
                    if s.speaker_id.is_empty() {
                        if let Some(u) = corpus.utterance(&s.utterance_id) {
                            s.speaker_id = u.speaker_id.clone();
                        }
                    }
                    out.push(s);
                }
                Ok(out)
            };
            let a = load(scores)?;
            let groups = aggregate(&a, corpus.speakers(), parse_grouping(grouping)?, parse_weighting(weighting)?)?;
            let mut doc = json!({
                "groups": groups.iter().map(|g| json!({
                    "group": g.group, "members": g.members, "rate": g.rate, "percent": g.percent(),
                })).collect::<Vec<_>>(),
            });
            if let Some(path) = compare {
                let b: BTreeMap<String, f64> = load(path)?.into_iter().map(|s| (s.utterance_id, s.rate)).collect();
                let mut ra = Vec::with_capacity(a.len());
                let mut rb = Vec::with_capacity(a.len());
                for s in &a {
                    let other = b.get(&s.utterance_id).ok_or_else(|| {
                        dda_core::Error::Pairing(format!("`{}` missing from comparison", s.utterance_id))
                    })?;
                    ra.push(s.rate);
                    rb.push(*other);
                }
                if b.len() != a.len() {
                    return Err(dda_core::Error::Pairing("score files cover different utterances".into()).into());
                }
                let seed = config(cli)?.seed;
                let sig = paired_permutation_test(&ra, &rb, *resamples, seed)?;
                doc["significance"] = serde_json::to_value(sig)?;
            }
            emit_json(cli, &doc)?;
        }
        Command::RunPipeline {
            manifest,
            parallelism,
            backend,
            pool,
            timeout,
            no_filtering,
            text,
        } => {
            let mut cfg = config(cli)?;
            if *no_filtering {
                cfg.filtering = false;
            }
            let corpus = text.corpus(manifest)?;
            let backend = make_backend(backend, &corpus, &cfg, *pool, *timeout, text.unit)?;
            let threads = parallelism.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let output = run_stepwise(&corpus, backend.as_ref(), &cfg, threads)?;
            emit(cli, &output.to_jsonl())?;
            if let Some(worst) = output.failures.iter().map(|e| e.kind()).max_by_key(|k| match k {
                dda_core::ErrorKind::Validation => 2,
                dda_core::ErrorKind::Backend => 3,
                dda_core::ErrorKind::Internal => 4,
            }) {
                for f in &output.failures {
                    eprintln!("error: {f}");
                }
                return Ok(match worst {
                    dda_core::ErrorKind::Validation => 2,
                    dda_core::ErrorKind::Backend => 3,
                    dda_core::ErrorKind::Internal => 4,
                });
            }
        }
        Command::Report {
            trajectories,
            by_severity,
            manifest,
            table,
            baseline,
            precision,
            text,
        } => {
            let mut rendered = match (trajectories, table) {
                (Some(path), _) => {
                    let cfg = config(cli)?;
                    let trajs = trajectories_from_jsonl(&read(path)?)?;
                    if *by_severity {
                        let corpus = text.corpus(manifest.as_deref().expect("clap requires manifest"))?;
                        severity_table(&trajs, &cfg.stages, corpus.speakers(), precision.unwrap_or(2))?
                    } else {
                        let summary = summarize(&trajs, cfg.headline_cap, cfg.threshold)?;
                        trajectory_table(&trajs, &cfg.stages, &summary, precision.unwrap_or(1))?
                    }
                }
                (None, Some(path)) => {
                    let mut t = ResultsTable::from_json(&read(path)?)?;
                    if let Some(p) = precision {
                        t.precision = *p;
                    }
                    t
                }
                (None, None) => unreachable!("clap requires one input"),
            };
            if let Some(label) = baseline {
                rendered = compute_deltas(&rendered, label)?;
            }
            emit(cli, &render(&rendered, cli.format)?)?;
        }
    }
    Ok(0)
}
