use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ifragent::dataset::{self, Dataset, SftRecord};
use ifragent::deployment::{Deployer, DeploymentAgents, DeploymentConfig, StepOutcome, StepTrace};
use ifragent::eval::Matcher;
use ifragent::extraction::Extractor;
use ifragent::gateway::{build_embed, EnvOverrides};
use ifragent::model::{Action, HabitRepository, UserProfile};
use ifragent::store::SopStore;

use crate::config::Config;
use crate::{EvalArgs, ExportSftArgs, ExtractArgs, RunArgs};

/// Bad invocation (missing file, conflicting flags); exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(UsageError(format!("{what} {} does not exist", path.display())).into());
    }
    Ok(())
}

pub fn load_config(path: Option<&Path>, verbose: bool) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => {
            require_file(p, "config file")?;
            Config::load(p)?
        }
        None => Config::default(),
    };
    cfg.apply_env(&EnvOverrides::from_env());
    cfg.set_verbose(verbose);
    Ok(cfg)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    require_file(path, "dataset")?;
    Ok(dataset::load_dataset(path)?)
}

/// Learned habits live next to the SOP files as `<user_id>.habits.json`.
pub fn habits_path(store: &Path, user: &str) -> PathBuf {
    store.join(format!("{user}.habits.json"))
}

/// The user's profile with the habits learned so far; the dataset's own
/// habit list is the starting point when nothing has been learned yet.
fn load_profile(store: &Path, user: &UserProfile) -> Result<UserProfile> {
    let path = habits_path(store, &user.user_id);
    let mut profile = user.clone();
    if path.is_file() {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        profile.habits =
            serde_json::from_str::<HabitRepository>(&text).with_context(|| format!("parsing {}", path.display()))?;
    }
    Ok(profile)
}

fn save_habits(store: &Path, profile: &UserProfile) -> Result<()> {
    let path = habits_path(store, &profile.user_id);
    let mut text = serde_json::to_string_pretty(&profile.habits)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn extract(args: &ExtractArgs, cfg: &Config) -> Result<()> {
    require_file(&args.dataset, "dataset")?;
    let data = load_dataset(&args.dataset)?;
    if data.support.is_empty() {
        bail!("dataset {} has no support trajectories", args.dataset.display());
    }
    let tau = args.tau.unwrap_or(cfg.store.threshold);
    let mut store = SopStore::open(&args.store, cfg.embedding.dim, tau)?;
    let extractor = Extractor::new(
        cfg.extraction_prompts()?,
        cfg.agent("explicit")?,
        cfg.agent("implicit")?,
        build_embed(&cfg.embedding).context("building the embedder")?,
    );
    for user in &data.users {
        let support: Vec<_> = data.support_for(&user.user_id).cloned().collect();
        if support.is_empty() {
            println!("{}: no support trajectories", user.user_id);
            continue;
        }
        let existing = store.entries(&user.user_id).len();
        if existing > 0 {
            eprintln!(
                "warning: store already holds {existing} entries for {}; extraction appends, re-running is not idempotent",
                user.user_id
            );
        }
        let mut profile = load_profile(&args.store, user)?;
        let result = extractor.run(&mut store, &mut profile, &support);
        save_habits(&args.store, &profile)?;
        let summary = result.with_context(|| format!("extraction for user {}", user.user_id))?;
        println!(
            "{}: +{} SOPs ({} stored), +{} habits ({} total)",
            user.user_id,
            summary.sops_added,
            store.entries(&user.user_id).len(),
            summary.habits_added,
            profile.habits.len()
        );
    }
    Ok(())
}

/// One line of `predictions.jsonl`; `action` is null for a failed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user_id: String,
    pub query: String,
    pub step_index: usize,
    pub action: Option<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&StepOutcome> for Prediction {
    fn from(o: &StepOutcome) -> Self {
        Prediction {
            user_id: o.trace.user_id.clone(),
            query: o.trace.query.clone(),
            step_index: o.trace.step_index,
            action: o.outcome.as_ref().ok().map(|(a, _)| a.clone()),
            error: o.outcome.as_ref().err().map(|e| e.to_string()),
        }
    }
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    for item in items {
        let line = serde_json::to_string(&item)?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn run(args: &RunArgs, cfg: &Config, verbose: bool) -> Result<()> {
    require_file(&args.dataset, "dataset")?;
    let data = load_dataset(&args.dataset)?;
    if !args.store.is_dir() {
        return Err(UsageError(format!(
            "store directory {} does not exist; run `extract` first",
            args.store.display()
        ))
        .into());
    }
    let tau = args.tau.unwrap_or(cfg.store.threshold);
    let store = SopStore::open(&args.store, cfg.embedding.dim, tau)?;
    let deploy_cfg = DeploymentConfig {
        k_shots: args.k_shots.unwrap_or(cfg.deployment.k_shots),
        adapter: args.adapter.clone().unwrap_or_else(|| cfg.deployment.adapter.clone()),
        verbose,
    };
    let deployer = Deployer::new(
        deploy_cfg,
        cfg.deployment_prompts()?,
        DeploymentAgents {
            extractor: cfg.agent("extractor")?,
            rewriter: cfg.agent("rewriter")?,
            agent: cfg.agent("agent")?,
        },
        build_embed(&cfg.embedding).context("building the embedder")?,
    )?;
    let mut profiles = HashMap::new();
    for u in &data.users {
        profiles.insert(u.user_id.as_str(), load_profile(&args.store, u)?);
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        if j == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        pool = pool.num_threads(j);
    }
    let outcomes: Vec<StepOutcome> = pool.build()?.install(|| {
        data.test
            .par_iter()
            .map(|t| {
                let plan = deployer.plan(&store, &profiles[t.user_id.as_str()], &t.query);
                t.steps
                    .par_iter()
                    .enumerate()
                    .map(|(j, s)| deployer.act_on(&plan, j, &s.screenshot))
                    .collect::<Vec<_>>()
            })
            .flatten()
            .collect()
    });

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let predictions = args.out.join("predictions.jsonl");
    let traces = args.out.join("traces.jsonl");
    write_lines(&predictions, outcomes.iter().map(Prediction::from))?;
    write_lines(&traces, outcomes.iter().map(|o| &o.trace))?;

    let failed: Vec<&StepOutcome> = outcomes.iter().filter(|o| o.outcome.is_err()).collect();
    for o in &failed {
        log::warn!(
            "{} / {:?} / step {}: {}",
            o.trace.user_id,
            o.trace.query,
            o.trace.step_index,
            o.outcome.as_ref().unwrap_err()
        );
    }
    println!(
        "{} steps: {} with actions, {} errored; wrote {} and {}",
        outcomes.len(),
        outcomes.len() - failed.len(),
        failed.len(),
        predictions.display(),
        traces.display()
    );
    if !outcomes.is_empty() && failed.len() == outcomes.len() {
        bail!("every step failed; first error: {}", failed[0].outcome.as_ref().unwrap_err());
    }
    Ok(())
}

type StepKey = (String, String, usize);

fn describe(k: &StepKey) -> String {
    format!("{} / {:?} / step {}", k.0, k.1, k.2)
}

pub fn eval(args: &EvalArgs, cfg: &Config) -> Result<()> {
    require_file(&args.dataset, "dataset")?;
    let data = load_dataset(&args.dataset)?;
    require_file(&args.predictions, "predictions file")?;
    let mut policy = cfg.policy.clone();
    if let Some(spec) = &args.policy {
        policy.apply_overrides(spec).map_err(|e| UsageError(format!("--policy: {e}")))?;
    }
    let matcher = Matcher::new(&policy)?;

    let mut preds: HashMap<StepKey, Option<Action>> = HashMap::new();
    for p in read_lines::<Prediction>(&args.predictions)? {
        let key = (p.user_id, p.query, p.step_index);
        if preds.insert(key.clone(), p.action).is_some() {
            bail!("duplicate prediction for {}", describe(&key));
        }
    }
    let mut seen = HashSet::new();
    let mut missing = Vec::new();
    let mut joined = Vec::new();
    for t in &data.test {
        for (j, step) in t.steps.iter().enumerate() {
            let key = (t.user_id.clone(), t.query.clone(), j);
            if !seen.insert(key.clone()) {
                bail!("test step {} occurs twice in the dataset; the join key is ambiguous", describe(&key));
            }
            match preds.get(&key) {
                Some(a) => joined.push((a.as_ref(), step, t.scenario.as_str())),
                None => missing.push(describe(&key)),
            }
        }
    }
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(20).cloned().collect();
        let more = if missing.len() > shown.len() {
            format!("\n  ... and {} more", missing.len() - shown.len())
        } else {
            String::new()
        };
        bail!(
            "predictions do not cover the test set: {} of {} steps missing:\n  {}{more}",
            missing.len(),
            seen.len(),
            shown.join("\n  ")
        );
    }
    let extra = preds.keys().filter(|k| !seen.contains(*k)).count();
    if extra > 0 {
        eprintln!("warning: {extra} prediction(s) do not correspond to any test step and were ignored");
    }

    let report = matcher.aggregate(joined)?;
    report.validate().context("internal invariant IAR <= SR <= Type violated")?;
    let out_dir = match &args.out {
        Some(d) => d.clone(),
        None => args.predictions.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !out_dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&out_dir)?;
    }
    let report_path = out_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(&report_path, text).with_context(|| format!("writing {}", report_path.display()))?;
    print!("{}", report.render_table());
    println!("report: {}", report_path.display());
    Ok(())
}

pub fn export_sft(args: &ExportSftArgs, _cfg: &Config) -> Result<()> {
    require_file(&args.dataset, "dataset")?;
    let data = load_dataset(&args.dataset)?;
    let records = match &args.traces {
        None => data.sft.clone(),
        Some(path) => {
            require_file(path, "traces file")?;
            let traces: Vec<StepTrace> = read_lines(path)?;
            records_from_traces(&data, &traces, args.store.as_deref())?
        }
    };
    dataset::export_sft(&records, &args.out)?;
    println!("wrote {} SFT records to {}", records.len(), args.out.display());
    Ok(())
}

/// One record per planned `(user, query)`; steps of the same task share a plan.
fn records_from_traces(data: &Dataset, traces: &[StepTrace], store: Option<&Path>) -> Result<Vec<SftRecord>> {
    let mut habits = BTreeMap::new();
    for u in &data.users {
        let profile = match store {
            Some(dir) => load_profile(dir, u)?,
            None => u.clone(),
        };
        habits.insert(u.user_id.clone(), profile.habits);
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut skipped = 0;
    for t in traces {
        let (Some(sop), Some(rq), Some(rsop)) = (&t.sop, &t.rewritten_query, &t.rewritten_sop) else { continue };
        if !seen.insert((t.user_id.clone(), t.query.clone())) {
            continue;
        }
        let h = habits.get(&t.user_id).with_context(|| format!("trace for unknown user {}", t.user_id))?;
        if h.is_empty() {
            skipped += 1;
            continue;
        }
        out.push(dataset::sft_record(&t.query, sop, h, rq, rsop));
    }
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} task(s) of users without recorded habits");
    }
    Ok(out)
}
