//! Evolutionary search over the classifier's system instruction.
//!
//! An initial pool is generated and scored; each iteration draws `r`
//! candidates by fitness-proportional roulette, asks the optimizer model for
//! `r` new instructions under the current phase (exploration, combination,
//! refinement), scores them, and stops after `P` iterations or `T` iterations
//! without a new best.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatClient, LlmError};

pub const META_HEADER: &str = "== META PROMPT ==";
const SELECTED_HEADER: &str = "== SELECTED INSTRUCTIONS ==";
const EXEMPLAR_HEADER: &str = "== EXEMPLARS ==";
const GENERATION_ATTEMPTS: usize = 3;

const OPTIMIZER_SYSTEM: &str = "You write system instructions for an LLM that classifies \
human activities from sensor-window statistics and retrieved labeled examples.";

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("candidate {0} has not been evaluated")]
    NotEvaluated(u64),
    #[error("optimizer model produced no usable instruction")]
    DegenerateGeneration,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("fitness evaluation failed: {0}")]
    Fitness(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Initialization,
    Exploration,
    Combination,
    Refinement,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Initialization => "initialization",
            Strategy::Exploration => "exploration",
            Strategy::Combination => "combination",
            Strategy::Refinement => "refinement",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            Strategy::Initialization,
            Strategy::Exploration,
            Strategy::Combination,
            Strategy::Refinement,
        ]
        .into_iter()
        .find(|x| x.name() == s)
    }

    fn directive(self) -> &'static str {
        match self {
            Strategy::Initialization => {
                "Generate diverse initial instructions for the activity classifier. Vary the \
                 emphasis: which statistics to compare, how to weigh the retrieved samples, \
                 and how to settle disagreements."
            }
            Strategy::Exploration => {
                "Generate diverse instructions that take a clearly different approach from \
                 the ones above."
            }
            Strategy::Combination => {
                "Apply crossover and mutation to the best-performing instructions above: \
                 merge their strongest parts into one instruction and alter a detail."
            }
            Strategy::Refinement => {
                "Rephrase the best-performing instruction above literally, keeping its \
                 meaning and making it clearer."
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub id: u64,
    pub instruction: String,
    pub fitness: Option<f64>,
    pub iteration_born: usize,
    pub strategy: Strategy,
    pub parent_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Initial pool size `M`.
    pub population: usize,
    /// Candidates selected and generated per iteration, `r`.
    pub select: usize,
    /// Iteration cap `P`.
    pub max_iterations: usize,
    /// Stop after this many iterations without a new best, `T`.
    pub patience: usize,
    pub exemplar_count: usize,
    /// Last exploration and last combination iteration; `None` splits the
    /// `P` iterations into thirds.
    pub phase_bounds: Option<(usize, usize)>,
    pub seed: u64,
    /// Fraction of the validation set scored per fitness evaluation.
    pub validation_fraction: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            population: 20,
            select: 5,
            max_iterations: 10,
            patience: 3,
            exemplar_count: 2,
            phase_bounds: None,
            seed: 0,
            validation_fraction: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: String| Err(OptimizeError::InvalidConfig(m));
        if self.population == 0 {
            return bad("population must be >= 1".into());
        }
        if self.select == 0 || self.select > self.population {
            return bad(format!(
                "select must be in 1..={}, got {}",
                self.population, self.select
            ));
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if self.max_iterations > 0 && self.patience > self.max_iterations {
            return bad(format!(
                "patience {} exceeds max_iterations {}",
                self.patience, self.max_iterations
            ));
        }
        if let Some((a, b)) = self.phase_bounds {
            if a > b {
                return bad(format!("phase bounds ({a}, {b}) are not ordered"));
            }
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 1.0) {
            return bad("validation_fraction must be in (0, 1]".into());
        }
        Ok(())
    }

    /// Phase of iteration `it` (1-based).
    pub fn strategy_for(&self, it: usize) -> Strategy {
        let (explore_end, combine_end) = self.phase_bounds.unwrap_or_else(|| {
            let p = self.max_iterations;
            (p.div_ceil(3), (2 * p).div_ceil(3))
        });
        if it <= explore_end {
            Strategy::Exploration
        } else if it <= combine_end {
            Strategy::Combination
        } else {
            Strategy::Refinement
        }
    }
}

/// Scores an instruction; higher is better, in `[0, 1]`.
pub trait Fitness: Sync {
    fn fitness(&self, instruction: &str) -> Result<f64, OptimizeError>;
}

/// A worked example shown to the optimizer model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub true_label: String,
    /// Labeled-samples and candidate blocks of a classification prompt.
    pub prompt_text: String,
}

/// Draws `r` distinct candidates, each draw proportional to fitness among
/// those remaining (uniform when all remaining fitnesses are zero). Returns
/// indices into `candidates` in draw order.
pub fn roulette_select<R: Rng + ?Sized>(
    candidates: &[PromptCandidate],
    r: usize,
    rng: &mut R,
) -> Result<Vec<usize>, OptimizeError> {
    let mut remaining: Vec<(usize, f64)> = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let f = c.fitness.ok_or(OptimizeError::NotEvaluated(c.id))?;
        remaining.push((i, f.max(0.0)));
    }
    if r > remaining.len() {
        return Err(OptimizeError::InvalidConfig(format!(
            "cannot select {r} of {} candidates",
            remaining.len()
        )));
    }
    let mut picked = Vec::with_capacity(r);
    for _ in 0..r {
        let pos = match WeightedIndex::new(remaining.iter().map(|c| c.1)) {
            Ok(dist) => dist.sample(rng),
            Err(_) => rng.random_range(0..remaining.len()),
        };
        picked.push(remaining.remove(pos).0);
    }
    Ok(picked)
}

fn push_exemplars(out: &mut String, exemplars: &[Exemplar]) {
    if exemplars.is_empty() {
        return;
    }
    out.push_str(EXEMPLAR_HEADER);
    out.push('\n');
    for (i, e) in exemplars.iter().enumerate() {
        out.push_str(&format!(
            "-- exemplar {} (true label: {}) --\n{}\n",
            i + 1,
            e.true_label,
            e.prompt_text.trim_end()
        ));
    }
}

/// Meta-prompt for iterations after the first: each selected instruction
/// with its fitness, the phase directive and optional exemplars.
pub fn build_meta_prompt(
    selected: &[&PromptCandidate],
    strategy: Strategy,
    exemplars: &[Exemplar],
) -> String {
    let mut out = format!(
        "{META_HEADER}\nSTRATEGY: {}\nDIRECTIVE: {}\n{SELECTED_HEADER}\n",
        strategy.name(),
        strategy.directive()
    );
    for c in selected {
        let fitness = c
            .fitness
            .map_or_else(|| "unevaluated".to_string(), |f| format!("{f:.4}"));
        out.push_str(&format!(
            "-- instruction {} (fitness={fitness}) --\n{}\n-- end --\n",
            c.id,
            c.instruction.trim()
        ));
    }
    push_exemplars(&mut out, exemplars);
    out.push_str(
        "Write one new system instruction for the activity classifier. Reply with the \
         instruction text only.\n",
    );
    out
}

/// Meta-prompt that seeds the initial pool from a base instruction.
pub fn build_init_prompt(base_instruction: &str, exemplars: &[Exemplar]) -> String {
    let base = PromptCandidate {
        id: 0,
        instruction: base_instruction.to_string(),
        fitness: None,
        iteration_born: 0,
        strategy: Strategy::Initialization,
        parent_ids: Vec::new(),
    };
    build_meta_prompt(&[&base], Strategy::Initialization, exemplars)
}

fn clean_instruction(reply: &str) -> String {
    let t = reply.trim();
    let t = t
        .strip_prefix("INSTRUCTION:")
        .or_else(|| t.strip_prefix("Instruction:"))
        .unwrap_or(t);
    t.trim().trim_matches('`').trim().to_string()
}

/// Requests `n` new instructions distinct from each other and from `existing`.
/// A reply that is empty or a duplicate is re-requested up to two more times
/// and then dropped with a warning.
pub fn generate_candidates(
    client: &dyn ChatClient,
    meta_prompt: &str,
    n: usize,
    existing: &[&str],
) -> Result<Vec<String>, OptimizeError> {
    let mut out: Vec<String> = Vec::with_capacity(n);
    for j in 0..n {
        let mut got = None;
        for attempt in 0..GENERATION_ATTEMPTS {
            let user = format!("{meta_prompt}REQUEST: {j}.{attempt}\n");
            let text = clean_instruction(&client.chat(OPTIMIZER_SYSTEM, &user)?);
            if text.is_empty() {
                continue;
            }
            if existing.contains(&text.as_str()) || out.contains(&text) {
                continue;
            }
            got = Some(text);
            break;
        }
        match got {
            Some(t) => out.push(t),
            None => tracing::warn!(request = j, "no new distinct instruction, dropped"),
        }
    }
    if out.is_empty() {
        return Err(OptimizeError::DegenerateGeneration);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub strategy: Strategy,
    pub selected_ids: Vec<u64>,
    pub candidates: Vec<PromptCandidate>,
    pub best_id: u64,
    pub best_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerLog {
    pub version: u32,
    pub run_id: String,
    pub seed: u64,
    pub evaluations: usize,
    pub iterations: Vec<IterationRecord>,
}

impl OptimizerLog {
    pub fn file_name(&self) -> String {
        format!("optimizer-{}-seed{}.jsonl", self.run_id, self.seed)
    }

    /// One JSON object per iteration, each line tagged with run id, seed and
    /// format version.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.iterations {
            let line = serde_json::json!({
                "version": self.version,
                "run_id": self.run_id,
                "seed": self.seed,
                "record": rec,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    /// Appends the log to `<dir>/<file_name>`, returning the path.
    pub fn append_to_dir(&self, dir: &Path) -> Result<PathBuf, OptimizeError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(path)
    }

    pub fn best_fitness_trace(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.best_fitness).collect()
    }
}

fn run_id(cfg: &OptimizerConfig, base_instruction: &str) -> String {
    let text = format!(
        "{}\n{}",
        serde_json::to_string(cfg).unwrap_or_default(),
        base_instruction
    );
    format!("{:08x}", crc32fast::hash(text.as_bytes()))
}

fn evaluate(batch: &mut [PromptCandidate], fitness: &dyn Fitness) -> Result<(), OptimizeError> {
    let scores: Vec<Result<f64, OptimizeError>> = batch
        .par_iter()
        .map(|c| fitness.fitness(&c.instruction))
        .collect();
    for (c, s) in batch.iter_mut().zip(scores) {
        c.fitness = Some(s?.clamp(0.0, 1.0));
    }
    Ok(())
}

fn best_of(pool: &[PromptCandidate]) -> &PromptCandidate {
    // earliest id wins ties
    pool.iter()
        .fold(None::<&PromptCandidate>, |best, c| match best {
            Some(b) if b.fitness >= c.fitness => Some(b),
            _ => Some(c),
        })
        .expect("pool non-empty")
}

/// Runs the search. The base instruction is candidate 0 of the initial pool.
pub fn optimize(
    cfg: &OptimizerConfig,
    client: &dyn ChatClient,
    fitness: &dyn Fitness,
    base_instruction: &str,
    exemplars: &[Exemplar],
) -> Result<(PromptCandidate, OptimizerLog), OptimizeError> {
    cfg.validate()?;
    let exemplars = &exemplars[..exemplars.len().min(cfg.exemplar_count)];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = OptimizerLog {
        version: 1,
        run_id: run_id(cfg, base_instruction),
        seed: cfg.seed,
        evaluations: 0,
        iterations: Vec::new(),
    };

    let mut texts = vec![base_instruction.trim().to_string()];
    if cfg.population > 1 {
        let init = build_init_prompt(base_instruction, exemplars);
        let existing = [texts[0].as_str()];
        texts.extend(generate_candidates(client, &init, cfg.population - 1, &existing)?);
    }
    let mut pool: Vec<PromptCandidate> = texts
        .into_iter()
        .enumerate()
        .map(|(i, instruction)| PromptCandidate {
            id: i as u64,
            instruction,
            fitness: None,
            iteration_born: 0,
            strategy: Strategy::Initialization,
            parent_ids: Vec::new(),
        })
        .collect();
    evaluate(&mut pool, fitness)?;
    log.evaluations += pool.len();
    let mut best = best_of(&pool).clone();
    log.iterations.push(IterationRecord {
        iteration: 0,
        strategy: Strategy::Initialization,
        selected_ids: Vec::new(),
        candidates: pool.clone(),
        best_id: best.id,
        best_fitness: best.fitness.unwrap_or(0.0),
    });

    let mut stagnant = 0;
    for it in 1..=cfg.max_iterations {
        let strategy = cfg.strategy_for(it);
        let r = cfg.select.min(pool.len());
        let picks = roulette_select(&pool, r, &mut rng)?;
        let selected: Vec<&PromptCandidate> = picks.iter().map(|&i| &pool[i]).collect();
        let meta = build_meta_prompt(&selected, strategy, exemplars);
        let existing: Vec<&str> = pool.iter().map(|c| c.instruction.as_str()).collect();
        let new_texts = match generate_candidates(client, &meta, r, &existing) {
            Ok(t) => t,
            Err(OptimizeError::DegenerateGeneration) => Vec::new(),
            Err(e) => return Err(e),
        };
        let parent_ids: Vec<u64> = selected.iter().map(|c| c.id).collect();
        let first_id = pool.len() as u64;
        let mut born: Vec<PromptCandidate> = new_texts
            .into_iter()
            .enumerate()
            .map(|(j, instruction)| PromptCandidate {
                id: first_id + j as u64,
                instruction,
                fitness: None,
                iteration_born: it,
                strategy,
                parent_ids: parent_ids.clone(),
            })
            .collect();
        evaluate(&mut born, fitness)?;
        log.evaluations += born.len();

        let improved = born
            .iter()
            .filter(|c| c.fitness > best.fitness)
            .fold(None::<&PromptCandidate>, |b, c| match b {
                Some(b) if b.fitness >= c.fitness => Some(b),
                _ => Some(c),
            })
            .cloned();
        match improved {
            Some(c) => {
                best = c;
                stagnant = 0;
            }
            None => stagnant += 1,
        }
        log.iterations.push(IterationRecord {
            iteration: it,
            strategy,
            selected_ids: parent_ids,
            candidates: born.clone(),
            best_id: best.id,
            best_fitness: best.fitness.unwrap_or(0.0),
        });
        pool.extend(born);
        tracing::info!(
            iteration = it,
            strategy = strategy.name(),
            best = best.fitness.unwrap_or(0.0),
            "optimizer iteration"
        );
        if stagnant >= cfg.patience {
            break;
        }
    }
    Ok((best, log))
}

struct MetaView {
    strategy: Strategy,
    instructions: Vec<(u64, f64, String)>,
    request: String,
}

fn read_meta(prompt: &str) -> MetaView {
    let mut strategy = Strategy::Exploration;
    let mut instructions = Vec::new();
    let mut request = String::new();
    let mut current: Option<(u64, f64, Vec<&str>)> = None;
    for line in prompt.lines() {
        if let Some((id, f, body)) = current.as_mut() {
            if line == "-- end --" {
                instructions.push((*id, *f, body.join("\n")));
                current = None;
            } else {
                body.push(line);
            }
            continue;
        }
        if let Some(s) = line.strip_prefix("STRATEGY: ") {
            strategy = Strategy::from_name(s.trim()).unwrap_or(Strategy::Exploration);
        } else if let Some(r) = line.strip_prefix("REQUEST: ") {
            request = r.trim().to_string();
        } else if let Some(rest) = line.strip_prefix("-- instruction ") {
            let id = rest
                .split_whitespace()
                .next()
                .and_then(|s| s.parse().ok())
                .unwrap_or(0);
            let f = rest
                .split_once("fitness=")
                .and_then(|(_, s)| s.trim_end_matches([')', ' ', '-']).parse().ok())
                .unwrap_or(0.0);
            current = Some((id, f, Vec::new()));
        }
    }
    MetaView {
        strategy,
        instructions,
        request,
    }
}

const FOCUS: [&str; 12] = [
    "Weigh the full-window statistics more heavily than the thirds.",
    "Pay close attention to std and n_peaks, which separate dynamic from static activities.",
    "Compare the start, mid and end thirds to detect transitions within the window.",
    "Prefer the label shared by the highest-scoring labeled samples.",
    "Treat channels with the largest spread as the most informative.",
    "When samples disagree, favour those whose mean and median are closest to the candidate.",
    "Check whether the quartile range of the candidate matches each labeled sample.",
    "Count how many labeled samples agree before deciding.",
    "Look for periodicity through the peak counts of each channel.",
    "Consider the intensity implied by max and min values on every axis.",
    "Ignore samples whose statistics differ by an order of magnitude from the candidate.",
    "Reason about gravity-dominated channels separately from motion-dominated ones.",
];

const STYLE: [&str; 6] = [
    "Be concise.",
    "Think step by step before answering.",
    "Answer only from the evidence given.",
    "Do not invent labels outside the admissible set.",
    "Keep the rationale to one sentence.",
    "State the single most decisive statistic in the rationale.",
];

/// Reply of the offline optimizer model: a seeded recombination of the
/// selected instructions with stock guidance sentences.
pub fn mock_generator_reply(prompt: &str, seed: u64) -> String {
    let view = read_meta(prompt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crc32fast::hash(prompt.as_bytes()) as u64);
    let mut ranked = view.instructions.clone();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let first = ranked.first().map(|c| c.2.clone()).unwrap_or_default();
    let first = first.split(" (variant").next().unwrap_or("").to_string();
    let focus = FOCUS[rng.random_range(0..FOCUS.len())];
    let style = STYLE[rng.random_range(0..STYLE.len())];
    match view.strategy {
        Strategy::Initialization | Strategy::Exploration => {
            format!("{first} {focus} {style} (variant {})", view.request)
        }
        Strategy::Combination => {
            let second = ranked.get(1).map(|c| c.2.as_str()).unwrap_or("");
            let second = second.split(" (variant").next().unwrap_or("");
            let tail = second
                .split_once(". ")
                .map(|(_, rest)| rest)
                .unwrap_or(second);
            format!("{first} {tail} {focus} (variant {})", view.request)
        }
        Strategy::Refinement => {
            let swaps = [
                ("Compare", "Contrast"),
                ("decide", "determine"),
                ("samples", "examples"),
                ("heavily", "strongly"),
            ];
            let mut text = first;
            for (a, b) in swaps {
                if rng.random_bool(0.5) {
                    text = text.replace(a, b);
                }
            }
            format!("{text} {style} (variant {})", view.request)
        }
    }
}

/// Test landscape: fitness is the keyword count, saturating at ten.
pub struct KeywordFitness {
    pub keyword: String,
}

impl Fitness for KeywordFitness {
    fn fitness(&self, instruction: &str) -> Result<f64, OptimizeError> {
        let n = instruction.matches(self.keyword.as_str()).count();
        Ok(n.min(10) as f64 / 10.0)
    }
}

/// Test optimizer model for [`KeywordFitness`]: under combination it joins the
/// two fittest selected instructions and appends the keyword; otherwise it
/// rephrases the fittest without adding one.
pub struct KeywordGenerator {
    pub keyword: String,
}

impl ChatClient for KeywordGenerator {
    fn client_id(&self) -> &str {
        "keyword-generator"
    }

    fn chat(&self, _system: &str, user: &str) -> Result<String, LlmError> {
        let view = read_meta(user);
        let mut ranked = view.instructions;
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let best = ranked.first().map(|c| c.2.clone()).unwrap_or_default();
        let tag = format!("[{}]", view.request);
        Ok(match view.strategy {
            Strategy::Combination => {
                let second = ranked.get(1).map(|c| c.2.as_str()).unwrap_or("");
                let strip = |s: &str| s.split(" [").next().unwrap_or("").to_string();
                format!("{} {} {} {tag}", strip(&best), strip(second), self.keyword)
            }
            Strategy::Initialization => {
                let j: usize = view
                    .request
                    .split('.')
                    .next()
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(0);
                let kws = vec![self.keyword.as_str(); j % 3].join(" ");
                format!("seed instruction {kws} {tag}")
            }
            _ => format!("{} {tag}", best.split(" [").next().unwrap_or("")),
        })
    }
}
