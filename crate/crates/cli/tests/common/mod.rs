#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use corpuslab_core::{MCItem, Outcome, Vote};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_corpuslab"))
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "corpuslab {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn synthetic_items(n: usize, seed: u64) -> Vec<MCItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let k = rng.random_range(2..=5);
            MCItem {
                id: format!("item-{i}"),
                question: format!("Soru numarasi {i}: {}", rng.random::<u32>()),
                choices: (0..k).map(|c| format!("secenek {i}.{c}")).collect(),
                answer_index: rng.random_range(0..k),
                category: Some(["fen", "tarih"][i % 2].to_string()),
            }
        })
        .collect()
}

pub fn write_items(path: &Path, items: &[MCItem]) {
    let text: String = items.iter().map(|i| serde_json::to_string(i).unwrap() + "\n").collect();
    std::fs::write(path, text).unwrap();
}

/// Rows of per-dataset percentages (COPA, XStoryCloze, ARC Easy, ARC, HellaSwag)
/// with the reported averages.
pub const CORPUS_TABLE: [(&str, [f64; 5], f64); 7] = [
    ("Base", [60.00, 55.33, 37.71, 23.65, 36.39], 42.62),
    ("SKWO", [59.20, 57.64, 39.31, 27.92, 36.19], 44.05),
    ("AutoMath", [57.20, 53.47, 36.06, 27.50, 33.62], 41.57),
    ("Stories", [59.40, 60.95, 42.14, 25.70, 37.80], 45.20),
    ("Web1", [57.00, 55.85, 38.04, 24.34, 36.36], 42.32),
    ("Web2", [58.00, 56.32, 39.10, 24.77, 36.57], 42.95),
    ("OpenOrca", [59.40, 56.05, 38.47, 24.77, 37.22], 43.18),
];

pub fn write_corpus_table(path: &Path) {
    let mut text = String::from("Data,Copa,Xstory,ARC Easy,ARC,HellaSwag,Avg\n");
    for (name, scores, avg) in CORPUS_TABLE {
        let cells: Vec<String> = scores.iter().map(|s| format!("{s:.2}")).collect();
        text.push_str(&format!("{name},{},{avg:.2}\n", cells.join(",")));
    }
    std::fs::write(path, text).unwrap();
}

/// Votes drawn from Bradley-Terry strengths over uniformly chosen pairs.
pub fn bradley_terry_votes(strengths: &[(&str, f64)], n: usize, judges: usize, seed: u64) -> Vec<Vote> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let categories = ["Logic", "Coding", "Story Creation"];
    (0..n)
        .map(|i| {
            let x = rng.random_range(0..strengths.len());
            let y = (x + rng.random_range(1..strengths.len())) % strengths.len();
            let (a, b) = if strengths[x].0 < strengths[y].0 { (x, y) } else { (y, x) };
            let p = strengths[a].1 / (strengths[a].1 + strengths[b].1);
            Vote {
                vote_id: format!("v{i:05}"),
                judge_id: format!("R{}", i % judges + 1),
                question_id: format!("q{}", i % 50),
                category: categories[i % categories.len()].to_string(),
                model_a: strengths[a].0.to_string(),
                model_b: strengths[b].0.to_string(),
                outcome: if rng.random_bool(p) { Outcome::A } else { Outcome::B },
                timestamp: "2024-06-01T10:00:00Z".parse().unwrap(),
            }
        })
        .collect()
}

pub fn write_votes(path: &Path, votes: &[Vote]) {
    let text: String = votes.iter().map(|v| serde_json::to_string(v).unwrap() + "\n").collect();
    std::fs::write(path, text).unwrap();
}

/// Writes a questions/responses pair; responses never mention model names.
pub fn write_arena_inputs(dir: &Path, models: &[&str], questions: usize) -> (PathBuf, PathBuf) {
    let categories = ["Logic", "Coding", "Listing", "Basic Math"];
    let q_path = dir.join("questions.jsonl");
    let r_path = dir.join("responses.jsonl");
    let mut q = String::new();
    let mut r = String::new();
    for i in 0..questions {
        q.push_str(&format!(
            "{{\"question_id\":\"v{i}\",\"text\":\"Soru {i}\",\"category\":\"{}\"}}\n",
            categories[i % categories.len()]
        ));
        for (m, model) in models.iter().enumerate() {
            r.push_str(&format!(
                "{{\"model\":\"{model}\",\"question_id\":\"v{i}\",\"response\":\"yanit {i}-{m}\"}}\n"
            ));
        }
    }
    std::fs::write(&q_path, q).unwrap();
    std::fs::write(&r_path, r).unwrap();
    (q_path, r_path)
}

/// A running `serve` process.
pub struct Server {
    pub child: Child,
    pub base: String,
}

impl Server {
    pub fn start(questions: &Path, responses: &Path, votes: &Path, out_dir: &Path, seed: u64) -> Self {
        let mut child = bin()
            .args(["serve", "--listen", "127.0.0.1:0", "--permutations", "50", "--seed"])
            .arg(seed.to_string())
            .arg("--out-dir")
            .arg(out_dir)
            .arg("--questions")
            .arg(questions)
            .arg("--responses")
            .arg(responses)
            .arg("--votes")
            .arg(votes)
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .unwrap();
        let stdout = child.stdout.take().unwrap();
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line).unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected banner `{line}`"))
            .to_string();
        Self { child, base }
    }

    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }

    /// SIGTERM, then wait for a clean exit.
    pub fn terminate(mut self) -> std::process::ExitStatus {
        Command::new("kill")
            .args(["-TERM", &self.child.id().to_string()])
            .status()
            .unwrap();
        self.child.wait().unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
