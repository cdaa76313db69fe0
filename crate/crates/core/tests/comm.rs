mod common;

use std::io::Cursor;
use std::sync::Arc;
use std::time::{Duration, Instant};

use soas::clock::ManualClock;
use soas::comm::{
    decode_frame, encode_frame, fan_out, ping, query_agent, read_frame, register_with, write_frame, CommError,
    CommSettings, FanOutError, Message, Outcome, MAX_FRAME_BYTES,
};
use soas::registry::{AgentDescriptor, AgentRegistry, RegistryListener};
use soas::request::{build_semantic_query, default_lexicon, default_stopwords, SemanticQuery, UserRequest};
use soas::sim::{
    load_knowledge_base, serve, AgentSpec, Behavior, InFlightGauge, KnowledgeBase, RunningAgent, ServeOptions,
};
use tokio::net::TcpStream;

fn query(text: &str) -> SemanticQuery {
    let request = UserRequest::new("req-1", text, 0).unwrap();
    build_semantic_query(&request, &default_stopwords(), &default_lexicon()).unwrap()
}

fn kb(name: &str) -> Arc<KnowledgeBase> {
    Arc::new(load_knowledge_base(common::fixtures().join("kb").join(format!("{name}.tsv"))).unwrap())
}

async fn agent(id: &str, kb_name: &str, behavior: Behavior) -> RunningAgent {
    let options = ServeOptions {
        behavior,
        ..Default::default()
    };
    serve(kb(kb_name), "127.0.0.1:0", None, AgentSpec::new(id, "travel"), options)
        .await
        .unwrap()
}

fn dead_descriptor(id: &str) -> AgentDescriptor {
    AgentDescriptor::new(id, "travel", ["semantic-query".to_string()], "127.0.0.1:1")
}

#[tokio::test]
async fn query_agent_returns_items_stamped_with_the_agent() {
    let a = agent("east", "hotels-east", Behavior::Normal).await;
    let q = query("hotels in vienna with wifi");
    let r = query_agent(a.descriptor(), &q, 1_000, MAX_FRAME_BYTES).await;
    assert_eq!(r.outcome, Outcome::Ok);
    assert_eq!(r.agent_id, "east");
    assert_eq!(r.request_id, "req-1");
    let ids: Vec<&str> = r.items.iter().map(|i| i.item_id.as_str()).collect();
    assert_eq!(ids, ["hotel-opera", "hotel-riverside"]);
    assert!(r.items.iter().all(|i| i.source_agent == "east"));
    assert_eq!(r.items[1].matched_patterns, 3);
}

#[tokio::test]
async fn slow_agent_times_out() {
    let a = agent("slow", "hotels-east", Behavior::Delay(Duration::from_secs(5))).await;
    let start = Instant::now();
    let r = query_agent(a.descriptor(), &query("hotels"), 100, MAX_FRAME_BYTES).await;
    assert_eq!(r.outcome, Outcome::Timeout);
    assert!(r.items.is_empty());
    assert!(start.elapsed() < Duration::from_millis(1_000));
}

#[tokio::test]
async fn refused_connection_is_connect_failed() {
    let r = query_agent(&dead_descriptor("dead"), &query("hotels"), 500, MAX_FRAME_BYTES).await;
    assert_eq!(r.outcome, Outcome::ConnectFailed);
}

#[tokio::test]
async fn malformed_and_dropped_replies_are_protocol_errors() {
    let bad = agent("bad", "hotels-east", Behavior::MalformedReply).await;
    let gone = agent("gone", "hotels-east", Behavior::DropConnection).await;
    let q = query("hotels");
    assert_eq!(
        query_agent(bad.descriptor(), &q, 500, MAX_FRAME_BYTES).await.outcome,
        Outcome::ProtocolError
    );
    assert_eq!(
        query_agent(gone.descriptor(), &q, 500, MAX_FRAME_BYTES).await.outcome,
        Outcome::ProtocolError
    );
}

#[tokio::test]
async fn fan_out_reports_one_response_per_agent_sorted_by_id() {
    let c = agent("c-west", "hotels-west", Behavior::Normal).await;
    let a = agent("a-east", "hotels-east", Behavior::Normal).await;
    let b = agent("b-city", "city-guide", Behavior::Normal).await;
    let agents = vec![
        c.descriptor().clone(),
        a.descriptor().clone(),
        b.descriptor().clone(),
        dead_descriptor("d-dead"),
    ];
    let responses = fan_out(&query("hotels in vienna"), &agents, &CommSettings::default())
        .await
        .unwrap();
    let summary: Vec<(&str, Outcome)> = responses.iter().map(|r| (r.agent_id.as_str(), r.outcome)).collect();
    assert_eq!(
        summary,
        [
            ("a-east", Outcome::Ok),
            ("b-city", Outcome::Ok),
            ("c-west", Outcome::Ok),
            ("d-dead", Outcome::ConnectFailed)
        ]
    );
}

#[tokio::test]
async fn fan_out_deadline_bounds_a_hung_agent() {
    let a = agent("a", "hotels-east", Behavior::Normal).await;
    let b = agent("b", "hotels-west", Behavior::Normal).await;
    let hung = agent("c", "city-guide", Behavior::Delay(Duration::from_secs(5))).await;
    let settings = CommSettings {
        per_agent_timeout_ms: 300,
        overall_deadline_ms: 300,
        ..Default::default()
    };
    let agents = vec![
        a.descriptor().clone(),
        b.descriptor().clone(),
        hung.descriptor().clone(),
    ];
    let start = Instant::now();
    let responses = fan_out(&query("hotels"), &agents, &settings).await.unwrap();
    assert!(start.elapsed() < Duration::from_millis(800));
    let outcomes: Vec<Outcome> = responses.iter().map(|r| r.outcome).collect();
    assert_eq!(outcomes, [Outcome::Ok, Outcome::Ok, Outcome::Timeout]);
}

#[tokio::test]
async fn fan_out_never_exceeds_max_parallel() {
    let gauge = Arc::new(InFlightGauge::default());
    let mut running = Vec::new();
    for i in 0..6 {
        let options = ServeOptions {
            behavior: Behavior::Delay(Duration::from_millis(60)),
            gauge: Some(gauge.clone()),
            ..Default::default()
        };
        let spec = AgentSpec::new(format!("agent-{i}"), "travel");
        running.push(
            serve(kb("hotels-east"), "127.0.0.1:0", None, spec, options)
                .await
                .unwrap(),
        );
    }
    let agents: Vec<AgentDescriptor> = running.iter().map(|r| r.descriptor().clone()).collect();
    let settings = CommSettings {
        max_parallel: 2,
        ..Default::default()
    };
    let responses = fan_out(&query("hotels"), &agents, &settings).await.unwrap();
    assert!(responses.iter().all(|r| r.outcome == Outcome::Ok));
    assert!(gauge.peak() <= 2, "peak {}", gauge.peak());
    assert!(gauge.peak() >= 1);
    assert_eq!(gauge.current(), 0);
}

#[tokio::test]
async fn fan_out_rejects_bad_input() {
    let q = query("hotels");
    assert!(matches!(
        fan_out(&q, &[], &CommSettings::default()).await,
        Err(FanOutError::NoAgentsGiven)
    ));
    let bad = CommSettings {
        max_parallel: 0,
        ..Default::default()
    };
    assert!(matches!(
        fan_out(&q, &[dead_descriptor("x")], &bad).await,
        Err(FanOutError::InvalidSettings(_))
    ));
}

#[tokio::test]
async fn agents_answer_identical_frames_identically() {
    let a = agent("east", "hotels-east", Behavior::Normal).await;
    let msg = Message::Query {
        request_id: "req-1".into(),
        query: query("hotels in vienna with wifi"),
    };
    let mut replies = Vec::new();
    for _ in 0..3 {
        let mut stream = TcpStream::connect(a.local_addr()).await.unwrap();
        write_frame(&mut stream, &msg, MAX_FRAME_BYTES).await.unwrap();
        let reply = read_frame(&mut stream, MAX_FRAME_BYTES).await.unwrap().unwrap();
        replies.push(encode_frame(&reply, MAX_FRAME_BYTES).unwrap());
    }
    assert!(replies.windows(2).all(|w| w[0] == w[1]));
    let decoded = decode_frame(&mut Cursor::new(&replies[0]), MAX_FRAME_BYTES).unwrap();
    assert!(matches!(decoded, Message::Results { ref request_id, .. } if request_id == "req-1"));
}

#[tokio::test]
async fn agents_self_register_over_the_wire() {
    let registry = Arc::new(AgentRegistry::new(30_000));
    let clock = Arc::new(ManualClock::new(7_000));
    let listener = RegistryListener::bind("127.0.0.1:0", registry.clone(), clock, MAX_FRAME_BYTES)
        .await
        .unwrap();
    let addr = listener.local_addr().to_string();

    let running = serve(
        kb("city-guide"),
        "127.0.0.1:0",
        Some(&addr),
        AgentSpec::new("guide", "travel"),
        ServeOptions::default(),
    )
    .await
    .unwrap();
    let located = registry.locate("travel", &Default::default(), 7_000);
    assert_eq!(located.len(), 1);
    assert_eq!(located[0].agent_id, "guide");
    assert_eq!(located[0].endpoint, running.local_addr().to_string());
    assert_eq!(located[0].last_seen, 7_000);

    let invalid = AgentDescriptor::new("", "travel", ["semantic-query".to_string()], "127.0.0.1:9");
    let err = register_with(&addr, &invalid, "r-2", 1_000).await.unwrap_err();
    assert!(matches!(err, CommError::Rejected { ref code, .. } if code == "invalid_descriptor"));
    assert_eq!(registry.len(), 1);

    ping(&addr, 1_000).await.unwrap();
    ping(&running.local_addr().to_string(), 1_000).await.unwrap();
}

#[tokio::test]
async fn registration_failure_is_reported() {
    let err = serve(
        kb("city-guide"),
        "127.0.0.1:0",
        Some("127.0.0.1:1"),
        AgentSpec::new("g", "travel"),
        ServeOptions {
            registration_timeout_ms: 500,
            ..Default::default()
        },
    )
    .await
    .err()
    .unwrap();
    assert!(err.to_string().contains("registration"));
}

#[tokio::test]
async fn heartbeats_refresh_last_seen() {
    let registry = Arc::new(AgentRegistry::new(30_000));
    let clock = Arc::new(ManualClock::new(1_000));
    let listener = RegistryListener::bind("127.0.0.1:0", registry.clone(), clock.clone(), MAX_FRAME_BYTES)
        .await
        .unwrap();
    let addr = listener.local_addr().to_string();
    let options = ServeOptions {
        heartbeat_ms: Some(20),
        registration_timeout_ms: 500,
        ..Default::default()
    };
    let _running = serve(
        kb("city-guide"),
        "127.0.0.1:0",
        Some(&addr),
        AgentSpec::new("g", "travel"),
        options,
    )
    .await
    .unwrap();
    clock.set(50_000);
    let deadline = Instant::now() + Duration::from_secs(2);
    while registry.snapshot()[0].last_seen != 50_000 {
        assert!(Instant::now() < deadline, "no heartbeat arrived");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}
