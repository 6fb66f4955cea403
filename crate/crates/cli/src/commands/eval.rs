use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use corpuslab_core::harness::{read_items_jsonl, ResultsFile};
use corpuslab_core::{evaluate_dataset, MCDataset, ScorerConfig, ScorerKind, ShotPolicy};
use serde_json::json;

use super::split_assignment;
use crate::manifest::{write_json, write_text, RunManifest};
use crate::Globals;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset JSONL, as `PATH` (named after the file stem) or `NAME=PATH`.
    #[arg(long = "dataset", required = true)]
    datasets: Vec<String>,
    /// Shot count override, `NAME=K`; built-in policy is ARC=25, HellaSwag=5, others 0.
    #[arg(long = "shots")]
    shots: Vec<String>,
    /// stub-oracle | stub-adversarial | stub-hash | remote
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// Scoring requests in flight at once.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Divide scores by continuation length.
    #[arg(long)]
    length_normalize: bool,
}

fn dataset_spec(raw: &str) -> anyhow::Result<(String, PathBuf)> {
    if let Ok((name, path)) = split_assignment(raw) {
        return Ok((name.to_string(), PathBuf::from(path)));
    }
    let path = PathBuf::from(raw);
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| anyhow::anyhow!("cannot derive a dataset name from `{raw}`"))?
        .to_string();
    Ok((name, path))
}

fn scorer_config(args: &EvalArgs, g: &Globals) -> anyhow::Result<ScorerConfig> {
    let file = &g.file.scorer;
    let kind: ScorerKind = args
        .scorer
        .as_deref()
        .or(file.kind.as_deref())
        .unwrap_or("stub-hash")
        .parse()?;
    let mut cfg = ScorerConfig::stub(kind);
    cfg.base_url = args.base_url.clone().or_else(|| file.base_url.clone());
    cfg.timeout_ms = args.timeout_ms.or(file.timeout_ms).unwrap_or(cfg.timeout_ms);
    cfg.max_retries = args.max_retries.or(file.max_retries).unwrap_or(cfg.max_retries);
    cfg.concurrency = args.concurrency.or(file.concurrency).unwrap_or(cfg.concurrency);
    cfg.length_normalize = args.length_normalize || file.length_normalize.unwrap_or(false);
    cfg.seed = g.seed;
    cfg.validate()?;
    Ok(cfg)
}

pub fn shot_policy(overrides: &[String], g: &Globals) -> anyhow::Result<ShotPolicy> {
    let mut policy = ShotPolicy::default();
    for (name, k) in &g.file.shots {
        policy.set(name, *k);
    }
    for raw in overrides {
        let (name, k) = split_assignment(raw)?;
        policy.set(name, k.parse().with_context(|| format!("shot count in `{raw}`"))?);
    }
    Ok(policy)
}

fn load_dataset(name: &str, path: &Path, shots: usize) -> anyhow::Result<MCDataset> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let items = read_items_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    Ok(MCDataset::new(name, items, shots)?)
}

pub fn run(g: &Globals, args: EvalArgs) -> anyhow::Result<()> {
    let scorer = scorer_config(&args, g)?;
    let policy = shot_policy(&args.shots, g)?;
    let mut manifest = RunManifest::new("eval", g.seed);
    manifest.scorer = Some(scorer.clone());
    manifest.params = json!({ "shots": policy });

    let mut table = String::from("dataset,shots,n_items,n_correct,accuracy_pct\n");
    for raw in &args.datasets {
        let (name, path) = dataset_spec(raw)?;
        manifest.input(&path);
        let shots = policy.shots_for(&name);
        let dataset = load_dataset(&name, &path, shots)?;
        let result = evaluate_dataset(&dataset, &scorer, g.seed)
            .with_context(|| format!("evaluating `{name}`"))?;
        let out = g.out_dir.join("results").join(format!("{name}.json"));
        write_json(&out, &ResultsFile::new(&result, g.seed, &scorer))?;
        manifest.output(&out);
        table.push_str(&format!(
            "{},{},{},{},{:.2}\n",
            name,
            shots,
            result.n_items,
            result.n_correct,
            result.accuracy_percent()
        ));
        println!("{name:<20} shots={shots:<3} accuracy={:.2}%", result.accuracy_percent());
    }
    let table_path = g.out_dir.join("eval_table.csv");
    write_text(&table_path, &table)?;
    manifest.output(&table_path);
    manifest.write(&g.out_dir)?;
    Ok(())
}
