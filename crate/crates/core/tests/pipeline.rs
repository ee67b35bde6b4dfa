use ifragent::deployment::{DeployStage, DeploymentConfig};
use ifragent::extraction::ExtractionError;
use ifragent::gateway::{ChatAgent, ChatBackendConfig, EchoChat, HashEmbedder, MockRule};
use ifragent::model::{HabitRepository, Language};
use ifragent::{
    Action, Deployer, DeploymentAgents, DeploymentPrompts, ExtractionPrompts, Extractor, Point, ScreenshotRef,
    SopStore, SupportTrajectory, UserProfile,
};

fn mock(rules: Vec<MockRule>) -> ChatAgent {
    ChatAgent::from_config(&ChatBackendConfig::mock(rules)).unwrap()
}

fn echo() -> ChatAgent {
    ChatAgent::new(Box::new(EchoChat), ChatBackendConfig::default())
}

fn embedder() -> Box<HashEmbedder> {
    Box::new(HashEmbedder::new(32, 3).unwrap())
}

fn screen(path: &str, i: usize) -> ScreenshotRef {
    ScreenshotRef { path: path.into(), width: 1000, height: 2000, step_index: i }
}

fn support(query: &str) -> SupportTrajectory {
    SupportTrajectory {
        user_id: "u1".into(),
        scenario: "food".into(),
        query: query.into(),
        screenshots: vec![screen("s0.png", 0), screen("s1.png", 1)],
    }
}

fn user() -> UserProfile {
    UserProfile { user_id: "u1".into(), language: Language::En, habits: HabitRepository::new() }
}

fn extractor() -> Extractor {
    Extractor::new(
        ExtractionPrompts::default(),
        mock(vec![
            MockRule::on_text("Task: order a latte at Luckin", "1. Open Luckin\n2. Search latte\n3. Pick oat milk"),
            MockRule::on_text("Task: buy bread", "1. Open Hema\n2. Search bread"),
        ]),
        mock(vec![
            MockRule::on_text("Task: order a latte at Luckin", "- prefers oat milk"),
            MockRule::on_text("Task: buy bread", "- shops at Hema"),
        ]),
        embedder(),
    )
}

#[test]
fn extract_then_deploy() {
    let mut store = SopStore::in_memory(32, 0.5).unwrap();
    let mut profile = user();
    let summary =
        extractor().run(&mut store, &mut profile, &[support("order a latte at Luckin"), support("buy bread")]).unwrap();
    assert_eq!((summary.sops_added, summary.habits_added), (2, 2));
    assert_eq!(store.entries("u1")[0].sop, ["Open Luckin", "Search latte", "Pick oat milk"]);
    assert_eq!(profile.habits.render(), "- prefers oat milk\n- shops at Hema");

    let deployer = Deployer::new(
        DeploymentConfig { verbose: true, ..Default::default() },
        DeploymentPrompts::default(),
        DeploymentAgents {
            extractor: mock(vec![MockRule::on_text("Task: order a latte", "1. Open Luckin\n2. Search latte")]),
            rewriter: mock(vec![MockRule::on_text(
                "prefers oat milk",
                "QUERY: order an oat milk latte at Luckin\n1. Open Luckin\n2. Search oat milk latte",
            )]),
            agent: mock(vec![MockRule::on_text("order an oat milk latte", "CLICK(250, 500)")]),
        },
        embedder(),
    )
    .unwrap();
    let plan = deployer.plan(&store, &profile, "order a latte");
    assert_eq!(plan.trace.matched_query.as_deref(), Some("order a latte at Luckin"));
    assert!(plan.trace.retrieval_score.unwrap() > 0.5);
    assert_eq!(plan.trace.shots.len(), 1);
    let step = deployer.act_on(&plan, 0, &screen("t0.png", 0));
    let (action, rewrite) = step.outcome.unwrap();
    assert_eq!(action, Action::Click(Point::new(0.25, 0.25).unwrap()));
    assert_eq!(rewrite.rewritten_sop, ["Open Luckin", "Search oat milk latte"]);
    let prompts = step.trace.prompts.unwrap();
    assert!(prompts.extractor.unwrap().contains("Search latte\n3. Pick oat milk"));
    assert!(prompts.agent.unwrap().contains("2. Search oat milk latte"));
}

#[test]
fn failed_trajectory_commits_nothing_for_itself() {
    let mut store = SopStore::in_memory(32, 0.5).unwrap();
    let mut profile = user();
    let err = extractor()
        .run(&mut store, &mut profile, &[support("order a latte at Luckin"), support("book a flight")])
        .unwrap_err();
    match err {
        ExtractionError::Trajectory { index, .. } => assert_eq!(index, 1),
        e => panic!("{e}"),
    }
    assert_eq!(store.entries("u1").len(), 1);
    assert_eq!(profile.habits.len(), 1);
}

#[test]
fn agent_gibberish_is_a_parse_failure_with_the_raw_reply() {
    let store = SopStore::in_memory(32, 0.5).unwrap();
    let deployer = Deployer::new(
        DeploymentConfig::default(),
        DeploymentPrompts::default(),
        DeploymentAgents {
            extractor: mock(vec![MockRule::on_text("Task:", "1. Open app")]),
            rewriter: echo(),
            agent: mock(vec![MockRule::on_text("Task:", "tap it")]),
        },
        embedder(),
    )
    .unwrap();
    let out = deployer.run_step(&store, &user(), "open the app", &screen("t0.png", 0));
    assert_eq!(out.outcome.unwrap_err().stage, DeployStage::Parse);
    assert_eq!(out.trace.raw_action.as_deref(), Some("tap it"));
    assert_eq!(out.trace.action, None);
    assert_eq!(out.trace.error.unwrap().stage, DeployStage::Parse);
}

#[test]
fn store_persists_across_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let mut profile = user();
    {
        let mut store = SopStore::open(dir.path(), 32, 0.5).unwrap();
        extractor().run(&mut store, &mut profile, &[support("buy bread")]).unwrap();
    }
    let store = SopStore::open(dir.path(), 32, 0.5).unwrap();
    assert_eq!(store.entries("u1").len(), 1);
    let q = ifragent::gateway::EmbedBackend::embed(&*embedder(), "buy bread").unwrap();
    let hit = store.retrieve("u1", &q).unwrap().unwrap();
    assert_eq!((hit.index, hit.sop.as_slice()), (0, ["Open Hema".to_string(), "Search bread".to_string()].as_slice()));
    assert!((hit.score - 1.0).abs() < 1e-12);
}
