//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dda_core::channel::{Candidate, LatticeStep};
use dda_core::corpus::synthetic::{generate, SyntheticSpec};
use dda_core::corpus::{write_manifest_jsonl, Corpus, Severity};
use dda_core::lm::{BOS, EOS};
use dda_core::pipeline::{check_trajectory, summarize, PipelineConfig, SpeakerTrajectory};
use dda_core::report::{average_final, compute_deltas, format_fixed, render, trajectory_table, ResultsTable, AVG};
use dda_core::{
    align, decode, ngram_coverage, paired_permutation_test, run_stepwise, select_covering_set, CoverageSpec, Error,
    ExternalBackend, FusionConfig, Lattice, NGramLM, Setting, SimulatedBackend, Unit,
};
use dda_core::report::Format;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Outcome)> = vec![
        ("1 golden arithmetic", Duration::from_secs(1), golden_arithmetic),
        ("2 alignment oracle", Duration::from_secs(60), alignment_oracle),
        ("3 decoder oracle", Duration::from_secs(30), decoder_oracle),
        ("4 lm normalization", Duration::from_secs(60), lm_normalization),
        ("5 stepwise state machine", Duration::from_secs(60), stepwise_state_machine),
        ("6 simulated ordering", Duration::from_secs(120), simulated_ordering),
        ("7 significance calibration", Duration::from_secs(60), significance_calibration),
        ("8 coverage greedy bound", Duration::from_secs(60), coverage_greedy_bound),
        ("9 reproducibility", Duration::from_secs(120), reproducibility),
        ("10 protocol conformance", Duration::from_secs(60), protocol_conformance),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, limit, check) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({elapsed:.2?}) {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {name}: FAIL ({elapsed:.2?}) {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn golden_arithmetic() -> Outcome {
    let mut t = ResultsTable::new(vec!["M".into(), "L".into(), "VL".into(), AVG.into()], 2);
    t.push_row("LOSO", vec![Some(39.56), Some(24.60), Some(6.30), Some(29.38)]).map_err(|e| e.to_string())?;
    t.push_row("Zero-Shot (V)", vec![None, None, None, Some(26.09)]).map_err(|e| e.to_string())?;
    t.push_row("One-Shot (F2)", vec![None, None, None, Some(23.40)]).map_err(|e| e.to_string())?;
    let t = compute_deltas(&t, "LOSO").map_err(|e| e.to_string())?;
    let d_v = t.rows[1].delta.ok_or("no delta")?;
    let d_f2 = t.rows[2].delta.ok_or("no delta")?;
    ensure!(format_fixed(d_v, 2) == "3.29", "zero-shot delta {d_v}");
    ensure!(format_fixed(d_f2, 2) == "5.98", "one-shot delta {d_f2}");
    ensure!((d_v - 3.29).abs() < 1e-9 && (d_f2 - 5.98).abs() < 1e-9, "deltas off: {d_v} {d_f2}");
    let md = render(&t, Format::Markdown).map_err(|e| e.to_string())?;
    ensure!(md.contains("26.09 (Δ 3.29%)") && md.contains("23.40 (Δ 5.98%)"), "rendered: {md}");

    let bold = [
        3.0, 7.1, 7.7, 18.8, 2.8, 1.5, 3.0, 15.3, 14.5, 11.8, 9.6, 18.2, 20.9, 8.7, 13.3, 17.6, 14.6, 17.8, 22.2, 15.5,
        63.5, 38.2, 90.9, 32.1,
    ];
    let avg = average_final(&bold).map_err(|e| e.to_string())?;
    ensure!(format_fixed(avg, 3) == "19.525", "average final {avg}");
    ensure!((avg - 19.525).abs() < 1e-9, "average final {avg}");
    Ok(format!("deltas {} {}, average {}", format_fixed(d_v, 2), format_fixed(d_f2, 2), format_fixed(avg, 3)))
}

fn all_sequences(max_len: usize, alphabet: &[&'static str]) -> Vec<Vec<&'static str>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for a in alphabet {
                let mut t: Vec<&str> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Edit distance straight from its recursive definition, memoized on
/// suffix lengths.
fn oracle_distance(a: &[&str], b: &[&str], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let d = if a[0] == b[0] {
        oracle_distance(&a[1..], &b[1..], memo)
    } else {
        1 + oracle_distance(&a[1..], b, memo)
            .min(oracle_distance(a, &b[1..], memo))
            .min(oracle_distance(&a[1..], &b[1..], memo))
    };
    memo.insert((a.len(), b.len()), d);
    d
}

fn alignment_oracle() -> Outcome {
    let seqs = all_sequences(6, &["a", "b", "c"]);
    let mut pairs = 0usize;
    let mut memo = HashMap::new();
    for (i, r) in seqs.iter().enumerate() {
        for h in &seqs[i..] {
            memo.clear();
            let expect = oracle_distance(r, h, &mut memo);
            let fwd = align(r, h);
            let back = align(h, r);
            ensure!(fwd.errors() == expect, "{r:?} vs {h:?}: {} != {expect}", fwd.errors());
            ensure!(back.errors() == expect, "{h:?} vs {r:?}: {} != {expect}", back.errors());
            ensure!(
                fwd.substitutions + fwd.deletions + fwd.matches == r.len(),
                "{r:?} vs {h:?}: counts do not cover the reference"
            );
            pairs += 1;
        }
    }
    ensure!(pairs <= 1_000_000, "{pairs} pairs");
    Ok(format!("{pairs} unordered pairs, both directions"))
}

fn random_lm(rng: &mut ChaCha8Rng, vocab: &[&str]) -> NGramLM {
    let texts: Vec<Vec<String>> = (0..rng.gen_range(1..8))
        .map(|_| {
            (0..rng.gen_range(1..7))
                .map(|_| vocab[rng.gen_range(0..vocab.len())].to_string())
                .collect()
        })
        .collect();
    let k = [0.01, 0.1, 0.5, 1.0][rng.gen_range(0..4)];
    NGramLM::train(&texts, 3, k).expect("random lm trains")
}

fn random_lattice(rng: &mut ChaCha8Rng, vocab: &[&str]) -> Lattice {
    let steps = (0..rng.gen_range(1..=5))
        .map(|_| {
            let n = rng.gen_range(1..=4);
            let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = weights.iter().sum();
            LatticeStep::new(
                weights
                    .iter()
                    .map(|w| {
                        let logp = (w / total).ln();
                        // Lattice tokens may fall outside the LM vocabulary.
                        match rng.gen_range(0..vocab.len() + 2) {
                            0 => Candidate::epsilon(logp),
                            i if i <= vocab.len() => Candidate::token(vocab[i - 1], logp),
                            _ => Candidate::token("zz", logp),
                        }
                    })
                    .collect(),
            )
        })
        .collect();
    let (lat, _) = Lattice::normalized("u", 0, steps).expect("random lattice is valid");
    lat
}

fn exhaustive_best(lattice: &Lattice, lm: &NGramLM, lambda: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut choice = vec![0usize; lattice.steps.len()];
    loop {
        let mut acoustic = 0.0;
        let mut tokens: Vec<&str> = Vec::new();
        for (step, &c) in lattice.steps.iter().zip(&choice) {
            let cand = &step.candidates[c];
            acoustic += cand.logp;
            if let Some(t) = &cand.token {
                tokens.push(t);
            }
        }
        let total = acoustic + lambda * lm.logprob(&tokens);
        if total > best {
            best = total;
        }
        // Odometer increment.
        let mut i = 0;
        loop {
            if i == choice.len() {
                return best;
            }
            choice[i] += 1;
            if choice[i] < lattice.steps[i].candidates.len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

fn decoder_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let vocab = ["a", "b", "c", "d"];
    let lambdas = [0.0, 0.3, 0.6, 0.8];
    let mut checks = 0;
    for case in 0..1000 {
        let lm = random_lm(&mut rng, &vocab);
        let lattice = random_lattice(&mut rng, &vocab);
        for &lambda in &lambdas {
            let hyp = decode(&lattice, &lm, &FusionConfig::unbounded(lambda)).map_err(|e| e.to_string())?;
            let best = exhaustive_best(&lattice, &lm, lambda);
            ensure!(
                hyp.total == best,
                "case {case}, lambda {lambda}: decode {} vs exhaustive {best}",
                hyp.total
            );
            ensure!(hyp.total == hyp.acoustic_score + lambda * hyp.lm_score, "case {case}: inconsistent total");
            checks += 1;
        }
    }
    Ok(format!("{checks} lattice/lambda checks, exact equality"))
}

fn lm_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let words = ["a", "b", "c", "d", "e", "f"];
    let mut worst = 0.0f64;
    for m in 0..100 {
        let order = rng.gen_range(1..=4);
        let texts: Vec<Vec<String>> = (0..rng.gen_range(1..10))
            .map(|_| {
                (0..rng.gen_range(1..8))
                    .map(|_| words[rng.gen_range(0..words.len())].to_string())
                    .collect()
            })
            .collect();
        let k = rng.gen_range(0.01..2.0);
        let lm = NGramLM::train(&texts, order, k).map_err(|e| e.to_string())?;
        // Contexts drawn from the vocabulary plus <s> and an unseen word.
        let mut pool: Vec<String> = lm.vocab().to_vec();
        pool.push("unseen".into());
        for _ in 0..1000 {
            let len = rng.gen_range(0..order);
            let ctx: Vec<&str> = (0..len).map(|_| pool[rng.gen_range(0..pool.len())].as_str()).collect();
            let sum: f64 = lm
                .vocab()
                .iter()
                .filter(|w| w.as_str() != BOS)
                .map(|w| lm.score_step(&ctx, w).exp())
                .sum();
            worst = worst.max((sum - 1.0).abs());
            ensure!((sum - 1.0).abs() <= 1e-9, "model {m}, context {ctx:?}: sum {sum}");
        }
        ensure!(lm.vocab().iter().any(|w| w == EOS), "model {m} lacks </s>");
    }
    Ok(format!("100 models x 1000 contexts, max |sum - 1| = {worst:.2e}"))
}

fn default_corpus() -> Corpus {
    generate(&SyntheticSpec::default()).expect("synthetic corpus")
}

fn run_sim(corpus: &Corpus, config: &PipelineConfig) -> Result<Vec<SpeakerTrajectory>, String> {
    let backend = SimulatedBackend::new(corpus, &config.rate_table(), config.adaptation_gains, config.seed)
        .map_err(|e| e.to_string())?;
    let out = run_stepwise(corpus, &backend, config, 4).map_err(|e| e.to_string())?;
    ensure!(out.failures.is_empty(), "failures: {:?}", out.failures);
    Ok(out.trajectories)
}

fn stepwise_state_machine() -> Outcome {
    let corpus = default_corpus();
    let config = PipelineConfig::default();
    let trajs = run_sim(&corpus, &config)?;
    let mut single = 0;
    for t in &trajs {
        check_trajectory(t, &config)?;
        let base = t.stage(Setting::Baseline).ok_or("missing baseline")?;
        if base.rate < 0.25 {
            ensure!(t.stages.len() == 1, "{} under threshold at baseline but has {} stages", t.speaker_id, t.stages.len());
            single += 1;
        }
    }
    let summary = summarize(&trajs, config.headline_cap, config.threshold).map_err(|e| e.to_string())?;
    let table = trajectory_table(&trajs, &config.stages, &summary, 1).map_err(|e| e.to_string())?;
    let md = render(&table, Format::Markdown).map_err(|e| e.to_string())?;
    let mut dashes = 0;
    for t in &trajs {
        let col = table.column_index(&t.speaker_id).ok_or("missing column")?;
        for s in &t.skipped {
            let line = md
                .lines()
                .find(|l| l.starts_with(&format!("| {} |", s.label())))
                .ok_or_else(|| format!("no row for {s}"))?;
            let cells: Vec<&str> = line.trim_matches('|').split('|').map(str::trim).collect();
            ensure!(cells[col + 1] == "---", "{} {s} renders `{}`", t.speaker_id, cells[col + 1]);
            dashes += 1;
        }
    }
    Ok(format!(
        "{} speakers, {single} stopped at baseline, {dashes} skipped cells rendered ---",
        trajs.len()
    ))
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn simulated_ordering() -> Outcome {
    let corpus = default_corpus();
    ensure!(corpus.speakers().len() == 24, "speakers");
    ensure!(
        corpus.speakers().keys().all(|s| corpus.utterances_of(s).count() >= 50),
        "fewer than 50 utterances"
    );
    let config = PipelineConfig {
        filtering: false,
        ..PipelineConfig::default()
    };
    let trajs = run_sim(&corpus, &config)?;
    ensure!(trajs.iter().all(|t| (t.coverage - 1.0).abs() < 1e-12), "coverage is not 1");
    let by_sev = |sev: Severity| {
        mean(trajs.iter().filter(|t| t.severity == sev).map(|t| t.stages[0].rate))
    };
    let (m, l, vl) = (by_sev(Severity::Moderate), by_sev(Severity::Low), by_sev(Severity::VeryLow));
    ensure!(m > l && l > vl, "baseline by severity {m} {l} {vl}");
    let stage_mean = |s: Setting| -> Result<f64, String> {
        let v: Vec<f64> = trajs.iter().filter_map(|t| t.stage(s)).map(|r| r.rate).collect();
        ensure!(v.len() == trajs.len(), "stage {s} missing for some speakers");
        Ok(mean(v))
    };
    let means = [
        stage_mean(Setting::Baseline)?,
        stage_mean(Setting::ZeroShotV)?,
        stage_mean(Setting::OneShotF2)?,
        stage_mean(Setting::AllTestF3)?,
    ];
    ensure!(means.windows(2).all(|w| w[0] > w[1]), "stage means not ordered: {means:?}");
    Ok(format!(
        "baseline M/L/VL {:.1}/{:.1}/{:.1}%, stages {:.1} > {:.1} > {:.1} > {:.1}%",
        m * 100.0,
        l * 100.0,
        vl * 100.0,
        means[0] * 100.0,
        means[1] * 100.0,
        means[2] * 100.0,
        means[3] * 100.0
    ))
}

fn significance_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trials = 1000;
    let mut rejections = 0;
    for trial in 0..trials {
        let b: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..0.6)).collect();
        let a: Vec<f64> = b.iter().map(|x| x + rng.gen_range(-0.1..0.1)).collect();
        let r = paired_permutation_test(&a, &b, 2000, trial).map_err(|e| e.to_string())?;
        if r.p_value < 0.05 {
            rejections += 1;
        }
    }
    let frac = rejections as f64 / trials as f64;
    ensure!((0.03..=0.07).contains(&frac), "null rejection rate {frac}");

    let b: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..0.5)).collect();
    let a: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
    let shifted = paired_permutation_test(&a, &b, 10_000, 0).map_err(|e| e.to_string())?;
    ensure!(shifted.p_value <= 0.001, "shift p = {}", shifted.p_value);
    Ok(format!("null rejection rate {frac:.3}, shift p = {:.5}", shifted.p_value))
}

fn coverage_greedy_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let words = ["a", "b", "c", "d", "e", "f", "g"];
    let spec = CoverageSpec::default();
    let bound = 1.0 - (-1.0f64).exp();
    let mut worst = f64::INFINITY;
    let text = |rng: &mut ChaCha8Rng| -> Vec<String> {
        (0..rng.gen_range(1..6))
            .map(|_| words[rng.gen_range(0..words.len())].to_string())
            .collect()
    };
    for inst in 0..200 {
        let target: Vec<Vec<String>> = (0..rng.gen_range(1..5)).map(|_| text(&mut rng)).collect();
        let cands: Vec<Vec<String>> = (0..rng.gen_range(1..=10)).map(|_| text(&mut rng)).collect();
        let budget = rng.gen_range(1..=4);
        let cov = |idx: &[usize]| -> f64 {
            let pool: Vec<&Vec<String>> = idx.iter().map(|&i| &cands[i]).collect();
            ngram_coverage(&pool, &target, &spec).expect("coverage").combined
        };
        let greedy = cov(&select_covering_set(&cands, &target, budget, &spec).map_err(|e| e.to_string())?);
        let mut optimum = 0.0f64;
        for mask in 0u32..(1 << cands.len()) {
            if mask.count_ones() as usize <= budget {
                let idx: Vec<usize> = (0..cands.len()).filter(|i| mask & (1 << i) != 0).collect();
                optimum = optimum.max(cov(&idx));
            }
        }
        ensure!(greedy + 1e-12 >= bound * optimum, "instance {inst}: greedy {greedy} vs optimum {optimum}");
        if optimum > 0.0 {
            worst = worst.min(greedy / optimum);
        }
        let itself = ngram_coverage(&target, &target, &spec).map_err(|e| e.to_string())?;
        ensure!(itself.combined == 1.0, "instance {inst}: self coverage {}", itself.combined);
    }
    Ok(format!("200 instances, worst greedy/optimum ratio {worst:.3}"))
}

fn write_manifest(corpus: &Corpus, dir: &Path) -> std::path::PathBuf {
    let path = dir.join("manifest.jsonl");
    let file = std::fs::File::create(&path).expect("create manifest");
    write_manifest_jsonl(corpus, file).expect("write manifest");
    path
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = write_manifest(&default_corpus(), dir.path());
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"threshold": 0.25, "seed": 7}"#).map_err(|e| e.to_string())?;
    let run = |threads: &str, out: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(out);
        let status = Command::new(env!("CARGO_BIN_EXE_dda"))
            .args(["run-pipeline", "--parallelism", threads, "--manifest"])
            .arg(&manifest)
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        ensure!(status.success(), "run-pipeline exited with {status}");
        std::fs::read(&out).map_err(|e| e.to_string())
    };
    let one = run("1", "p1.jsonl")?;
    let eight = run("8", "p8.jsonl")?;
    ensure!(!one.is_empty(), "empty output");
    ensure!(one == eight, "outputs differ");
    Ok(format!("{} identical bytes", one.len()))
}

fn echo_backend(args: &[&str], pool: usize) -> Result<ExternalBackend, String> {
    let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    ExternalBackend::spawn(
        env!("CARGO_BIN_EXE_dda-echo-backend"),
        &args,
        pool,
        Duration::from_secs(10),
        Unit::Word,
    )
    .map_err(|e| e.to_string())
}

fn protocol_conformance() -> Outcome {
    let spec = SyntheticSpec {
        groups: vec![(Severity::Moderate, 2), (Severity::Low, 2)],
        utterances_per_speaker: 25,
        ..SyntheticSpec::default()
    };
    let corpus = generate(&spec).map_err(|e| e.to_string())?;
    let config = PipelineConfig::default();

    let backend = echo_backend(&[], 2)?;
    let out = run_stepwise(&corpus, &backend, &config, 4).map_err(|e| e.to_string())?;
    ensure!(out.failures.is_empty(), "echo failures: {:?}", out.failures);
    let scores: Vec<_> = out.trajectories.iter().flat_map(|t| &t.stages[0].scores).collect();
    ensure!(scores.len() == 100, "{} utterances scored", scores.len());
    ensure!(scores.iter().all(|s| s.errors() == 0), "non-zero WER through echo backend");

    let bad = echo_backend(&["--malformed-prefix", "02_"], 2)?;
    let out = run_stepwise(&corpus, &bad, &config, 4).map_err(|e| e.to_string())?;
    ensure!(out.failures.len() == 1, "{} failures", out.failures.len());
    match &out.failures[0] {
        Error::StageAborted { speaker, source, .. } => {
            ensure!(speaker == "02", "aborted speaker {speaker}");
            ensure!(matches!(**source, Error::Protocol(_)), "source {source}");
        }
        other => return Err(format!("unexpected failure {other}")),
    }
    for t in &out.trajectories {
        if t.speaker_id == "02" {
            ensure!(t.aborted.as_ref().is_some_and(|a| a.kind == "protocol"), "02 not marked aborted");
        } else {
            ensure!(t.aborted.is_none() && t.final_rate == Some(0.0), "{} disturbed", t.speaker_id);
        }
    }
    Ok("100 utterances at WER 0; malformed speaker isolated as protocol error".into())
}
