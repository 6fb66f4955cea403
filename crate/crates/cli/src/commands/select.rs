use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use corpuslab_core::harness::{average_percent, ResultsFile};
use corpuslab_core::select_corpora;
use serde_json::json;

use super::split_assignment;
use crate::manifest::{write_json, RunManifest};
use crate::Globals;

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Directory of base-model result files written by `eval`.
    #[arg(long, conflicts_with = "table")]
    base: Option<PathBuf>,
    /// Candidate corpus results, `NAME=DIR`.
    #[arg(long = "candidate", conflicts_with = "table")]
    candidates: Vec<String>,
    /// CSV with one row per corpus: name column, then per-dataset percentages.
    /// A trailing `Avg` column is ignored and recomputed.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Row of `--table` holding the base model.
    #[arg(long, default_value = "Base")]
    base_row: String,
    /// Expected selection; a warning is printed when the rule disagrees.
    #[arg(long = "expect", value_delimiter = ',')]
    expect: Vec<String>,
}

/// Per-dataset percentages of one corpus run.
type Scores = BTreeMap<String, f64>;

fn read_results_dir(dir: &Path) -> anyhow::Result<Scores> {
    let mut scores = Scores::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries.into_iter().filter(|p| p.extension().is_some_and(|e| e == "json")) {
        let text = std::fs::read_to_string(&path)?;
        let file: ResultsFile =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        scores.insert(file.dataset_name.clone(), file.result().accuracy_percent());
    }
    if scores.is_empty() {
        bail!("no result files in {}", dir.display());
    }
    Ok(scores)
}

/// Dataset names, then one `(row name, percentages)` per row.
type Table = (Vec<String>, Vec<(String, Vec<f64>)>);

fn read_table(path: &Path) -> anyhow::Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let keep: Vec<usize> = (1..headers.len())
        .filter(|&i| !headers[i].eq_ignore_ascii_case("avg"))
        .collect();
    let datasets = keep.iter().map(|&i| headers[i].to_string()).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let values = keep
            .iter()
            .map(|&i| {
                record[i]
                    .parse::<f64>()
                    .with_context(|| format!("row `{}` column `{}`", &record[0], &headers[i]))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        rows.push((record[0].to_string(), values));
    }
    Ok((datasets, rows))
}

pub fn run(g: &Globals, args: SelectArgs) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("select", g.seed);
    let (base_name, base, candidates): (String, Scores, BTreeMap<String, Scores>) =
        if let Some(table) = &args.table {
            manifest.input(table);
            let (datasets, rows) = read_table(table)?;
            let mut base = None;
            let mut candidates = BTreeMap::new();
            for (name, values) in rows {
                let scores: Scores = datasets.iter().cloned().zip(values).collect();
                if name == args.base_row {
                    base = Some(scores);
                } else if candidates.insert(name.clone(), scores).is_some() {
                    bail!("duplicate row `{name}`");
                }
            }
            let base = base.ok_or_else(|| anyhow::anyhow!("no `{}` row in table", args.base_row))?;
            (args.base_row.clone(), base, candidates)
        } else {
            let base_dir = args.base.as_ref().ok_or_else(|| anyhow::anyhow!("pass --base or --table"))?;
            manifest.input(base_dir);
            let base = read_results_dir(base_dir)?;
            let mut candidates = BTreeMap::new();
            for raw in &args.candidates {
                let (name, dir) = split_assignment(raw)?;
                manifest.input(Path::new(dir));
                candidates.insert(name.to_string(), read_results_dir(Path::new(dir))?);
            }
            ("base".to_string(), base, candidates)
        };

    let base_sets: BTreeSet<&String> = base.keys().collect();
    for (name, scores) in &candidates {
        let sets: BTreeSet<&String> = scores.keys().collect();
        if sets != base_sets {
            bail!(
                "candidate `{name}` covers datasets {:?} but base covers {:?}",
                sets,
                base_sets
            );
        }
    }

    let base_avg = average_percent(&base.values().copied().collect::<Vec<_>>())?;
    let averages: BTreeMap<String, f64> = candidates
        .iter()
        .map(|(name, s)| Ok((name.clone(), average_percent(&s.values().copied().collect::<Vec<_>>())?)))
        .collect::<anyhow::Result<_>>()?;
    let report = select_corpora(base_avg, &averages);

    println!("{:<12} {:>8}", base_name, format!("{base_avg:.2}"));
    for (name, avg) in &report.candidates {
        let mark = if report.selected.contains(name) { "selected" } else { "" };
        println!("{name:<12} {:>8} {mark}", format!("{avg:.2}"));
    }
    let mut warning = None;
    if !args.expect.is_empty() {
        let expected: BTreeSet<String> = args.expect.iter().map(|s| s.trim().to_string()).collect();
        if let Some(mismatch) = report.compare_expected(&expected) {
            eprintln!("{mismatch}");
            warning = Some(mismatch);
        }
    }

    let out = g.out_dir.join("selection.json");
    write_json(&out, &json!({ "report": report, "warning": warning.as_ref().map(|w| w.to_string()) }))?;
    manifest.output(&out);
    manifest.params = json!({ "base_row": base_name, "expect": args.expect });
    manifest.write(&g.out_dir)?;
    Ok(())
}
