use std::collections::BTreeMap;
use std::path::PathBuf;

use council_client::{ClientError, CouncilClient};
use council_core::api::*;
use council_core::config::{Backend, SynthesisMode};
use council_core::events::{final_report_payload, validate_event_order};
use council_core::stats::CostParams;
use council_core::transcript::{load_transcript, replay_transcript, Transcript};
use council_core::{run_council, CouncilConfig, EventKind, Session};
use council_service::{AppState, ServiceConfig};

const QUERY: &str = "Explain how central banks transmit policy rate changes to mortgage markets";

async fn spawn_service(transcripts: Option<PathBuf>) -> CouncilClient {
    let mut config = ServiceConfig::new(CouncilConfig::default(), Backend::Mock);
    config.transcript_dir = transcripts;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(council_service::serve(listener, AppState::new(config), std::future::pending()));
    let client = CouncilClient::new(format!("http://{addr}"));
    client.health().await.unwrap();
    client
}

fn start(query: &str) -> StartCouncilRequest {
    StartCouncilRequest { query: query.into(), ..Default::default() }
}

#[tokio::test]
async fn council_run_streams_persists_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let client = spawn_service(Some(dir.path().to_path_buf())).await;
    let (id, events, view) = client.run_and_collect(&start(QUERY)).await.unwrap();

    validate_event_order(&events).unwrap();
    assert!(events.iter().all(|e| e.session_id == id));
    assert_eq!(events.iter().filter(|e| e.event_type == EventKind::ExpertStarted).count(), 3);
    assert_eq!(view.status, SessionStatus::Completed);

    let result = view.result.unwrap();
    let path = view.transcript_path.expect("transcript stored");
    let stored = load_transcript(&path).unwrap();
    assert_eq!(stored.result, result);
    let last = events.last().unwrap();
    assert_eq!(last.event_type, EventKind::FinalReport);
    assert_eq!(last.payload, final_report_payload(&stored.result));
    assert!(replay_transcript(&path).unwrap().is_clean());

    // Streaming adds no semantic state.
    let council = CouncilConfig::default().build_council(Backend::Mock).unwrap();
    let direct = run_council(QUERY, &Session::new(), &council).await.unwrap();
    assert_eq!(direct.without_timings(), result.without_timings());
}

#[tokio::test]
async fn bypass_and_late_subscriber() {
    let client = spawn_service(None).await;
    let (id, events, view) = client.run_and_collect(&start("hello")).await.unwrap();
    let kinds: Vec<_> = events.iter().map(|e| e.event_type).collect();
    assert_eq!(kinds, [EventKind::CouncilStarted, EventKind::TriageDecided, EventKind::FinalReport]);
    assert!(view.result.unwrap().bypassed());

    let mut replayed = Vec::new();
    let mut stream = Box::pin(client.events(&id).await.unwrap());
    while let Some(e) = futures::StreamExt::next(&mut stream).await {
        replayed.push(e.unwrap());
    }
    assert_eq!(replayed, events);
}

#[tokio::test]
async fn per_run_overrides() {
    let client = spawn_service(None).await;
    let req = StartCouncilRequest { expert_count: Some(2), seed: Some(9), ..start(QUERY) };
    let (_, events, view) = client.run_and_collect(&req).await.unwrap();
    validate_event_order(&events).unwrap();
    let result = view.result.unwrap();
    assert_eq!(result.seed, 9);
    assert!(result.partition.unwrap().partial.is_empty());

    let vote = StartCouncilRequest { synthesis_mode: Some(SynthesisMode::MajorityVote), ..start(QUERY) };
    let result = client.run_and_collect(&vote).await.unwrap().2.result.unwrap();
    assert!(result.report.is_none() && result.final_answer.is_some());

    let single = StartCouncilRequest { preset: Some("single-noweb".into()), ..start(QUERY) };
    assert_eq!(client.run_and_collect(&single).await.unwrap().2.result.unwrap().outcomes.len(), 1);
}

#[tokio::test]
async fn concurrent_sessions_are_isolated() {
    let client = spawn_service(None).await;
    let runs = (0..8).map(|i| {
        let client = client.clone();
        async move { client.run_and_collect(&StartCouncilRequest { seed: Some(i), ..start(QUERY) }).await.unwrap() }
    });
    let results = futures::future::join_all(runs).await;
    for (id, events, view) in results {
        validate_event_order(&events).unwrap();
        assert!(events.iter().all(|e| e.session_id == id));
        assert_eq!(view.status, SessionStatus::Completed);
    }
}

fn api_status(err: ClientError) -> u16 {
    match err {
        ClientError::Api { status, .. } => status.as_u16(),
        other => panic!("expected an API error, got {other}"),
    }
}

#[tokio::test]
async fn request_errors() {
    let client = spawn_service(None).await;
    assert_eq!(api_status(client.session("nope").await.unwrap_err()), 404);
    assert_eq!(api_status(client.start_council(&start("   ")).await.unwrap_err()), 400);
    let bad_preset = StartCouncilRequest { preset: Some("turbo".into()), ..start(QUERY) };
    assert_eq!(api_status(client.start_council(&bad_preset).await.unwrap_err()), 400);
    let rag = StartCouncilRequest { preset: Some("rag".into()), ..start(QUERY) };
    assert_eq!(api_status(client.start_council(&rag).await.unwrap_err()), 400);
    let one = StartCouncilRequest { expert_count: Some(1), ..start(QUERY) };
    assert_eq!(api_status(client.start_council(&one).await.unwrap_err()), 400);
    assert_eq!(api_status(client.replay("not a transcript").await.unwrap_err()), 422);
}

#[tokio::test]
async fn statistics_endpoints() {
    let client = spawn_service(None).await;

    let report = client
        .cost(&CostRequest { single: CostParams::new(30.0, 0.815, 2.5), council: CostParams::new(125.0, 0.917, 8.2) })
        .await
        .unwrap();
    assert!((report.cost_per_qaca_single - 30.0 / 815.0).abs() < 1e-12);
    assert!((report.marginal_cost_per_qaca.unwrap() - 95.0 / 102.0).abs() < 1e-12);

    let q = client.query_cost(&QueryCostRequest { n_experts: 3, tokens_in: 250, tokens_out: 800, pricing: None }).await.unwrap();
    assert_eq!(q.calls, 4);
    assert!((q.cost - 0.125).abs() < 1e-12);

    let rho = client.rho(&RhoRequest { a: vec![1, 0, 1, 0], b: vec![1, 0, 1, 0] }).await.unwrap();
    assert!((rho.rho - 1.0).abs() < 1e-12);
    assert_eq!(api_status(client.rho(&RhoRequest { a: vec![1, 1], b: vec![0, 1] }).await.unwrap_err()), 422);

    let kappa = client.kappa(&KappaRequest { a: vec!["y".into(), "n".into()], b: vec!["y".into(), "n".into()] }).await.unwrap();
    assert_eq!(kappa.kappa, 1.0);

    let groups = BTreeMap::from([("a".to_string(), vec![0.1, 0.5, 0.9]), ("b".to_string(), vec![0.9, 0.1, 0.5])]);
    let lev = client.levene(&LeveneRequest { groups, center: Default::default() }).await.unwrap();
    assert!((lev.p_value - 1.0).abs() < 1e-12);
    assert_eq!(lev.eta_squared, Some(0.0));
    assert_eq!(lev.bias_variance, 0.0);

    let t = client.paired_t(&PairedTRequest { a: vec![1.0, 2.0, 3.5], b: vec![0.5, 1.0, 2.0] }).await.unwrap();
    assert!(t.t > 0.0 && t.p_value < 1.0);

    let ci = client.ci(&CiRequest { samples: vec![0.4; 20], resamples: 200, level: 0.95, seed: 1 }).await.unwrap();
    assert!((ci.lower - 0.4).abs() < 1e-12 && (ci.upper - 0.4).abs() < 1e-12);
}

#[tokio::test]
async fn simulation_and_triage_endpoints() {
    let client = spawn_service(None).await;
    let sim = client
        .simulate(&SimulateRequest { marginals: vec![0.2; 3], target_rho: Some(0.3), pair_targets: vec![], trials: 200_000, seed: 3 })
        .await
        .unwrap();
    assert_eq!(sim.result.trials, 200_000);
    assert!((sim.result.pairwise_rho[0][1].unwrap() - 0.3).abs() < 0.02);
    assert!(sim.result.empirical_joint_all <= sim.joint_bound.unwrap());

    let infeasible = SimulateRequest { marginals: vec![0.01, 0.9], target_rho: Some(0.99), pair_targets: vec![], trials: 10, seed: 0 };
    assert_eq!(api_status(client.simulate(&infeasible).await.unwrap_err()), 422);

    let metrics = client.triage_evaluate(&TriageEvalRequest { dataset: None, synthetic: Some(300), seed: 4 }).await.unwrap();
    assert!((metrics.trivial_fraction + metrics.nontrivial_fraction - 1.0).abs() < 1e-12);
    assert!(metrics.accuracy > 0.8);
}

#[tokio::test]
async fn replay_endpoint_flags_tampering() {
    let client = spawn_service(None).await;
    let result = client.run_and_collect(&start(QUERY)).await.unwrap().2.result.unwrap();
    let text = Transcript::new(result.clone()).to_text();
    let clean = client.replay(text).await.unwrap();
    assert!(clean.clean);
    assert_eq!(clean.query, QUERY);

    let mut tampered = result;
    let partition = tampered.partition.as_mut().unwrap();
    partition.consensus[0].support_count += 1;
    let report = client.replay(Transcript::new(tampered).to_text()).await.unwrap();
    assert!(!report.clean);
    assert!(report.mismatches.iter().any(|m| m.field.contains("support_count")), "{:?}", report.mismatches);
}
