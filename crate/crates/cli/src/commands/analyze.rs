use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use corpuslab_core::arena::analytics::AnalyticsError;
use corpuslab_core::arena::vote::read_votes_jsonl;
use corpuslab_core::{
    category_correlation, elo_permuted, judge_correlation, metric_correlation, win_pct_all,
    CorrelationMatrix, MetricTable,
};
use serde_json::json;

use crate::manifest::{write_json, write_text, RunManifest};
use crate::{EloArgs, Globals};

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Vote log (JSONL).
    #[arg(long)]
    votes: PathBuf,
    /// CSV of per-model metrics (`model,<metric>...`) correlated with ELO and winpct.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    elo: EloArgs,
}

fn read_metrics(path: &Path) -> anyhow::Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let mut rows = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let mut row = BTreeMap::new();
        for i in 1..headers.len() {
            let v: f64 = record[i]
                .parse()
                .with_context(|| format!("model `{}` metric `{}`", &record[0], &headers[i]))?;
            row.insert(headers[i].to_string(), v);
        }
        rows.insert(record[0].to_string(), row);
    }
    Ok(rows)
}

fn emit_matrix(
    g: &Globals,
    manifest: &mut RunManifest,
    skipped: &mut Vec<String>,
    name: &str,
    matrix: Result<CorrelationMatrix, AnalyticsError>,
) -> anyhow::Result<()> {
    match matrix {
        Ok(m) => {
            for label in &m.degenerate {
                eprintln!("warning: {name}: `{label}` is constant; its row and column are blank");
            }
            let json_path = g.out_dir.join(format!("{name}.json"));
            let csv_path = g.out_dir.join(format!("{name}.csv"));
            write_json(&json_path, &m)?;
            write_text(&csv_path, &m.to_csv())?;
            manifest.output(&json_path);
            manifest.output(&csv_path);
        }
        Err(AnalyticsError::InsufficientData(why)) => {
            eprintln!("warning: skipping {name}: {why}");
            skipped.push(format!("{name}: {why}"));
        }
        Err(e) => return Err(e).context(name.to_string()),
    }
    Ok(())
}

pub fn run(g: &Globals, args: AnalyzeArgs) -> anyhow::Result<()> {
    let elo = args.elo.resolve(&g.file, g.seed);
    let file = File::open(&args.votes).with_context(|| format!("opening {}", args.votes.display()))?;
    let votes = read_votes_jsonl(BufReader::new(file))?;
    let mut manifest = RunManifest::new("analyze", g.seed);
    manifest.input(&args.votes);

    let report = elo_permuted(&votes, &elo)?;
    let winpct = win_pct_all(&votes);
    let report_path = g.out_dir.join("elo_report.json");
    let winpct_path = g.out_dir.join("winpct.json");
    write_json(&report_path, &report)?;
    write_json(&winpct_path, &winpct)?;
    manifest.output(&report_path);
    manifest.output(&winpct_path);

    let by_model: BTreeMap<&str, f64> = winpct.iter().map(|w| (w.model.as_str(), w.value)).collect();
    println!("{:<28} {:>6} {:>12} {:>8}", "Model", "ELO", "CI", "WinPct");
    for r in &report.ratings {
        println!(
            "{:<28} {:>6.0} {:>12} {:>8.2}",
            r.model,
            r.mean_rating,
            format!("+{:.0}/-{:.0}", r.ci_plus, r.ci_minus),
            by_model[r.model.as_str()] * 100.0
        );
    }

    let mut skipped = Vec::new();
    emit_matrix(g, &mut manifest, &mut skipped, "judge_correlation", judge_correlation(&votes))?;
    emit_matrix(g, &mut manifest, &mut skipped, "category_correlation", category_correlation(&votes))?;

    let elo_by_model: BTreeMap<&str, f64> =
        report.ratings.iter().map(|r| (r.model.as_str(), r.mean_rating)).collect();
    let external = match &args.metrics {
        Some(path) => {
            manifest.input(path);
            read_metrics(path)?
        }
        None => BTreeMap::new(),
    };
    let models: Vec<String> = if args.metrics.is_some() {
        external.keys().filter(|m| elo_by_model.contains_key(m.as_str())).cloned().collect()
    } else {
        elo_by_model.keys().map(|m| m.to_string()).collect()
    };
    let mut table = MetricTable { models: models.clone(), columns: Vec::new() };
    let metric_names: Vec<String> = external.values().next().map(|r| r.keys().cloned().collect()).unwrap_or_default();
    for metric in &metric_names {
        table.push_column(metric.clone(), models.iter().map(|m| external[m][metric]).collect())?;
    }
    table.push_column("ELO", models.iter().map(|m| elo_by_model[m.as_str()]).collect())?;
    table.push_column("WinPct", models.iter().map(|m| by_model[m.as_str()]).collect())?;
    emit_matrix(g, &mut manifest, &mut skipped, "metric_correlation", metric_correlation(&table))?;

    manifest.params = json!({ "elo": elo, "skipped": skipped });
    manifest.write(&g.out_dir)?;
    Ok(())
}
