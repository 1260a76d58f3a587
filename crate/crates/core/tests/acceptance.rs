//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use async_trait::async_trait;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use council_core::config::{Backend, CouncilMode, SynthesisMode};
use council_core::consensus::{build_support_map, partition_claims, Claim, NormalizedMatcher};
use council_core::dispatch::{AgentError, ScriptEntry, ScriptStatus, ScriptedExpert};
use council_core::errorsim::{calibrate_pairwise, joint_bound, simulate, ErrorModelParams};
use council_core::events::validate_event_order;
use council_core::stats::{
    bootstrap_mean_ci, cohens_kappa, cost_report, council_calls, estimate_query_cost, levene_test_with, paired_t_test,
    pearson_error_correlation, CostParams, GroupScores, IndicatorSeries, LeveneCenter, ScoreKind, STUDY_PRICING,
};
use council_core::transcript::{load_transcript, persist_transcript, replay_transcript};
use council_core::triage::{
    classify_client, evaluate_triage, synthetic_labeled_set, triage_query, KeywordClassifier, ServerClassifier,
    ServerVerdict, TriageConfig, TriageOutcome, Verdict,
};
use council_core::{run_council, stream_council, Council, CouncilConfig, ExpertAgent, ExpertSpec, Session};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: impl Into<String>) -> Outcome {
    if cond {
        Ok(detail.into())
    } else {
        Err(detail.into())
    }
}

fn paused_runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_all().start_paused(true).build().unwrap()
}

fn real_runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

fn round_sig(x: f64, digits: i32) -> String {
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (digits - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn bound_example() -> Outcome {
    let got = joint_bound(0.20, 0.38, 3);
    check((got - 0.1904).abs() <= 1e-12, format!("joint_bound(0.20, 0.38, 3) = {got:.15}"))
}

fn independence_product() -> Outcome {
    let params = ErrorModelParams::independent(vec![0.2; 3], 2024);
    let sim = simulate(&params, 1_000_000).map_err(|e| e.to_string())?;
    let got = sim.empirical_joint_all;
    check((got - 0.008).abs() <= 0.0006, format!("triple-error rate {got:.5} vs 0.008"))
}

fn correlation_calibration() -> Outcome {
    let marginals = [0.191, 0.167, 0.201];
    let targets = [((0, 1), 0.35), ((0, 2), 0.38), ((1, 2), 0.32)];
    let params = calibrate_pairwise(&marginals, &targets, 7).map_err(|e| e.to_string())?;
    let sim = simulate(&params, 1_000_000).map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    let mut ok = true;
    for ((i, j), target) in targets {
        let rho = sim.pairwise_rho[i][j].ok_or("constant indicator")?;
        ok &= (rho - target).abs() <= 0.02;
        details.push(format!("rho{i}{j}={rho:.4}/{target}"));
    }
    let max_rho = sim.max_rho().ok_or("no rho")?;
    let bound = joint_bound(0.201, max_rho, 3);
    ok &= sim.empirical_joint_all <= bound;
    details.push(format!("joint {:.4} <= bound {bound:.4}", sim.empirical_joint_all));
    check(ok, details.join(", "))
}

fn cost_table() -> Outcome {
    let r = cost_report(&CostParams::new(30.0, 0.815, 2.5), &CostParams::new(125.0, 0.917, 8.2)).map_err(|e| e.to_string())?;
    let marginal = r.marginal_cost_per_qaca.ok_or("no marginal")?;
    let emitted = [
        format!("{:.3}", r.cost_per_qaca_single),
        format!("{:.3}", r.cost_per_qaca_council),
        round_sig(r.qaca_per_dollar_single, 3),
        round_sig(r.qaca_per_dollar_council, 3),
        format!("{:.2}", r.cost_ratio),
        format!("{marginal:.2}"),
    ];
    let expected = ["0.037", "0.136", "27.2", "7.34", "4.17", "0.93"];
    check(emitted == expected, format!("emitted {emitted:?}"))
}

fn per_query_cost() -> Outcome {
    let cost = estimate_query_cost(&council_calls(3, 250, 800), STUDY_PRICING).map_err(|e| e.to_string())?;
    check((cost - 0.125).abs() <= 0.005, format!("${cost:.4} per query"))
}

const REPORT: &str = "## Consensus\n- A\n## Partial Agreement\n(none)\n## Disagreements\n(none)\n## Unique Findings\n(none)\n## Comprehensive Analysis\nDone.";

struct AlwaysCouncil;

#[async_trait]
impl ServerClassifier for AlwaysCouncil {
    async fn classify(&self, _: &str, _: &Session) -> Result<ServerVerdict, AgentError> {
        Ok(ServerVerdict { verdict: Verdict::Nontrivial, direct_answer: None })
    }
}

fn scripted(id: &str, entry: ScriptEntry) -> Arc<dyn ExpertAgent> {
    Arc::new(ScriptedExpert::lenient(ExpertSpec::new(id, "scripted", id), entry))
}

fn latency_contract() -> Outcome {
    let experts = vec![
        scripted("a", ScriptEntry::ok("The sky is blue.", 2.0)),
        scripted("b", ScriptEntry::ok("The sky is blue.", 3.0)),
        scripted("c", ScriptEntry::ok("The sky is blue.", 5.0)),
    ];
    let council = Council::new(CouncilConfig::default(), experts, scripted("s", ScriptEntry::ok(REPORT, 2.0)), Arc::new(AlwaysCouncil));
    let start = Instant::now();
    let result = real_runtime()
        .block_on(run_council("Describe in depth why the daytime sky looks blue", &Session::new(), &council))
        .map_err(|e| e.to_string())?;
    let wall = start.elapsed().as_secs_f64();
    check(
        (7.0..=7.5).contains(&wall) && result.final_answer.as_deref() == Some("Done."),
        format!("wall {wall:.3}s, reported total {:.3}s", result.latency.total),
    )
}

fn partition_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let pool: Vec<String> = (0..12).map(|k| format!("Fact {k} holds.")).collect();
    let mut failures = 0usize;
    for map in 0..10_000 {
        let n = *[2usize, 3, 4].choose(&mut rng).unwrap();
        let mut sets = Vec::new();
        let mut oracle: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
        for e in 0..n {
            let count = rng.random_range(1..=6);
            let claims: Vec<Claim> = (0..count)
                .map(|c| {
                    let stmt = pool.choose(&mut rng).unwrap().clone();
                    oracle.entry(stmt.to_lowercase()).or_default().insert(e);
                    Claim::new(format!("m{map}e{e}c{c}"), stmt, format!("e{e}"))
                })
                .collect();
            sets.push((format!("e{e}"), claims));
        }
        let supports = build_support_map(&sets, &NormalizedMatcher::new()).map_err(|e| e.to_string())?;
        let partition = partition_claims(&supports, n).map_err(|e| e.to_string())?;
        let key = |s: &council_core::consensus::ClaimSupport| s.canonical_claim.statement.to_lowercase();
        let mut seen = BTreeSet::new();
        let mut ok = partition.len() == oracle.len();
        for (bucket, members) in [("c", &partition.consensus), ("p", &partition.partial), ("u", &partition.unique)] {
            for s in members.iter() {
                ok &= seen.insert(key(s));
                let count = oracle.get(&key(s)).map_or(0, BTreeSet::len);
                ok &= s.support_count == count;
                ok &= match bucket {
                    "c" => count == n,
                    "p" => count > 1 && count < n,
                    _ => count == 1,
                };
            }
        }
        ok &= seen.len() == oracle.len();
        if !ok {
            failures += 1;
        }
    }
    check(failures == 0, format!("10000 maps, {failures} failures"))
}

struct Down;

#[async_trait]
impl ServerClassifier for Down {
    async fn classify(&self, _: &str, _: &Session) -> Result<ServerVerdict, AgentError> {
        Err(AgentError::Provider("unavailable".into()))
    }
}

fn triage_boundaries() -> Outcome {
    let cfg = TriageConfig::default();
    let cases = [
        ("is water wet now??", Verdict::Trivial),
        ("is water wet now???", Verdict::Nontrivial),
        ("a b c d", Verdict::Trivial),
        ("a b c d e", Verdict::Nontrivial),
        ("abcdefghijklmnopqr", Verdict::Trivial),
        ("abcdefghijklmnopqrs", Verdict::Nontrivial),
        ("Thank you so much!", Verdict::Trivial),
    ];
    let mut ok = true;
    for (q, expected) in cases {
        ok &= classify_client(q, &cfg).map_err(|e| e.to_string())? == expected;
    }
    let rt = paused_runtime();
    let decision = rt.block_on(triage_query("hello", &Session::new(), &cfg, &Down)).map_err(|e| e.to_string())?;
    ok &= decision.outcome == TriageOutcome::Council && decision.degraded;

    let labeled = synthetic_labeled_set(2000, 11);
    let metrics = rt.block_on(evaluate_triage(&labeled, &cfg, &KeywordClassifier)).map_err(|e| e.to_string())?;
    let (mut correct, mut false_bypass, mut bypassed) = (0usize, 0usize, 0usize);
    for item in &labeled {
        let client = classify_client(&item.query, &cfg).map_err(|e| e.to_string())?;
        let server = rt.block_on(KeywordClassifier.classify(item.query.trim(), &Session::new())).map_err(|e| e.to_string())?;
        let bypass = client == Verdict::Trivial && server.verdict == Verdict::Trivial;
        let predicted = if bypass { Verdict::Trivial } else { Verdict::Nontrivial };
        correct += usize::from(predicted == item.gold);
        bypassed += usize::from(bypass);
        false_bypass += usize::from(bypass && item.gold == Verdict::Nontrivial);
    }
    let total = labeled.len() as f64;
    ok &= metrics.accuracy == correct as f64 / total;
    ok &= metrics.false_bypass_rate == false_bypass as f64 / total;
    ok &= metrics.trivial_fraction == bypassed as f64 / total;
    check(ok, format!("boundaries, fail-safe, recount accuracy {:.4} fbr {:.4}", metrics.accuracy, metrics.false_bypass_rate))
}

fn statistics_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut details = Vec::new();

    let x: Vec<u8> = (0..5000).map(|_| u8::from(rng.random_bool(0.2))).collect();
    let y: Vec<u8> = x.iter().map(|&v| if rng.random_bool(0.3) { 1 - v } else { v }).collect();
    let r = pearson_error_correlation(&IndicatorSeries::new("x", x.clone()).unwrap(), &IndicatorSeries::new("y", y.clone()).unwrap())
        .map_err(|e| e.to_string())?;
    let m = x.len() as f64;
    let (mx, my) = (x.iter().map(|&v| f64::from(v)).sum::<f64>() / m, y.iter().map(|&v| f64::from(v)).sum::<f64>() / m);
    let (mut num, mut dx, mut dy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(&y) {
        num += (f64::from(a) - mx) * (f64::from(b) - my);
        dx += (f64::from(a) - mx).powi(2);
        dy += (f64::from(b) - my).powi(2);
    }
    let direct = num / (dx.sqrt() * dy.sqrt());
    let pearson_ok = (r - direct).abs() <= 1e-12;
    details.push(format!("pearson diff {:.1e}", (r - direct).abs()));

    let fixture: Value = serde_json::from_str(include_str!("fixtures/stats_reference.json")).unwrap();
    let floats = |v: &Value| v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect::<Vec<f64>>();
    let groups = |v: &Value| {
        v.as_array().unwrap().iter().enumerate().fold(GroupScores::new(ScoreKind::Neutrality), |g, (i, s)| g.with_group(format!("g{i}"), floats(s)))
    };
    let mut p_ok = true;
    for (key, source, center) in [
        ("levene_unequal", "levene_unequal", LeveneCenter::Mean),
        ("levene_equal", "levene_equal", LeveneCenter::Mean),
        ("brown_forsythe_unequal", "levene_unequal", LeveneCenter::Median),
    ] {
        let (_, p) = levene_test_with(&groups(&fixture[source]["groups"]), center).map_err(|e| e.to_string())?;
        p_ok &= (p - fixture[key]["p_value"].as_f64().unwrap()).abs() <= 1e-6;
    }
    for key in ["paired_t", "paired_t_null"] {
        let (_, p) = paired_t_test(&floats(&fixture[key]["a"]), &floats(&fixture[key]["b"])).map_err(|e| e.to_string())?;
        p_ok &= (p - fixture[key]["p_value"].as_f64().unwrap()).abs() <= 1e-6;
    }
    details.push(format!("reference p-values {}", if p_ok { "match" } else { "differ" }));

    let mut covered = 0;
    for rep in 0..500u64 {
        let sample: Vec<f64> = (0..200).map(|_| f64::from(u8::from(rng.random_bool(0.2)))).collect();
        let (lo, hi) = bootstrap_mean_ci(&sample, 10_000 + rep).map_err(|e| e.to_string())?;
        covered += usize::from(lo <= 0.2 && 0.2 <= hi);
    }
    let coverage = covered as f64 / 500.0;
    let coverage_ok = (0.93..=0.97).contains(&coverage);
    details.push(format!("coverage {coverage:.3}"));

    let a: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..3)).collect();
    let b: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..3)).collect();
    let kappa = cohens_kappa(&a, &b).map_err(|e| e.to_string())?;
    let kappa_ok = kappa.abs() <= 0.05;
    details.push(format!("kappa {kappa:.4}"));

    check(pearson_ok && p_ok && coverage_ok && kappa_ok, details.join(", "))
}

fn random_council(rng: &mut ChaCha8Rng, seed: u64) -> Council {
    let n = rng.random_range(2..=4);
    let config = CouncilConfig {
        seed,
        expert_count: n,
        quorum: 2,
        expert_timeout_secs: 2.0,
        synthesis_mode: if rng.random_bool(0.2) { SynthesisMode::MajorityVote } else { SynthesisMode::Structured },
        ..CouncilConfig::default()
    };
    let mut council = config.build_council(Backend::Mock).unwrap();
    for slot in 0..n {
        let roll: f64 = rng.random();
        let id = council.experts[slot].id().to_string();
        if roll < 0.1 {
            council.experts[slot] = scripted(&id, ScriptEntry { text: String::new(), latency_secs: 0.3, status: ScriptStatus::ProviderError });
        } else if roll < 0.2 {
            council.experts[slot] = scripted(&id, ScriptEntry::ok("Too slow to matter.", 5.0));
        }
    }
    council
}

const QUERIES: &[&str] = &[
    "hello",
    "thanks",
    "Explain how central banks transmit policy rate changes to mortgage markets",
    "What are the main mechanisms of antibiotic resistance in gram negative bacteria?",
    "Compare the consistency models offered by distributed databases for global deployments",
    "Summarize the evidence on intermittent fasting and long term metabolic health",
];

fn protocol_properties() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rt = paused_runtime();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let (mut order_failures, mut transcript_failures, mut completed) = (0usize, 0usize, 0usize);
    for run in 0..1000u64 {
        let council = random_council(&mut rng, run);
        let query = *QUERIES.choose(&mut rng).unwrap();
        let sink = Mutex::new(Vec::new());
        let session_id = format!("s{run}");
        let outcome = rt.block_on(stream_council(query, &Session::new(), &council, &session_id, &sink));
        if validate_event_order(&sink.lock().unwrap()).is_err() {
            order_failures += 1;
        }
        let Ok(result) = outcome else { continue };
        completed += 1;
        let path = dir.path().join(format!("{run}.json"));
        let stored = persist_transcript(&result, &path).map_err(|e| e.to_string())?;
        let bytes = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let reloaded = load_transcript(&path).map_err(|e| e.to_string())?;
        let replay = replay_transcript(&path).map_err(|e| e.to_string())?;
        if reloaded.to_text() != bytes || stored.bytes != bytes.len() || !replay.is_clean() || reloaded.result != result {
            transcript_failures += 1;
        }
    }
    check(
        order_failures == 0 && transcript_failures == 0 && completed > 0,
        format!("1000 runs ({completed} completed), order failures {order_failures}, transcript failures {transcript_failures}"),
    )
}

fn ablation_smoke() -> Outcome {
    let rt = paused_runtime();
    let mut details = Vec::new();
    let mut ok = true;
    for n in [2usize, 3, 4] {
        for mode in [SynthesisMode::Structured, SynthesisMode::MajorityVote] {
            for (i, query) in QUERIES.iter().enumerate().skip(2) {
                let config = CouncilConfig { expert_count: n, synthesis_mode: mode, seed: i as u64, ..CouncilConfig::default() };
                let council = config.build_council(Backend::Mock).map_err(|e| e.to_string())?;
                let result = rt.block_on(run_council(query, &Session::new(), &council)).map_err(|e| e.to_string())?;
                let partition = result.partition.as_ref().ok_or("no partition")?;
                ok &= result.final_answer.is_some() && partition.n_experts == n && result.config.mode == CouncilMode::Council;
                if n == 2 {
                    ok &= partition.partial.is_empty();
                }
            }
        }
        details.push(format!("N={n} ok"));
    }
    details.push("majority vote ok".into());
    check(ok, details.join(", "))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("bound worked example", bound_example),
        ("independence product", independence_product),
        ("correlation calibration", correlation_calibration),
        ("cost table", cost_table),
        ("per-query council cost", per_query_cost),
        ("latency contract", latency_contract),
        ("partition correctness", partition_correctness),
        ("triage boundaries", triage_boundaries),
        ("statistics oracles", statistics_oracles),
        ("protocol properties", protocol_properties),
        ("ablation smoke", ablation_smoke),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 11 acceptance criteria passed");
}
