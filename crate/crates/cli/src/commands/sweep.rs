use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use cdiff_core::aggregate::MixtureWeights;
use cdiff_core::diffusion::{infer_batch, make_schedule, AccessSnapshot};
use cdiff_core::eval::{evaluable_users, evaluate_users, EvalTarget};
use cdiff_core::hashing::write_atomic;
use cdiff_core::neighbors::build_cache;
use cdiff_core::pseudo::{build_pseudo_users, PseudoUserMatrix};

use super::echo_config;
use super::evaluate::{evaluate_scorer, ModelScorer};
use super::train::fit;
use crate::config::RunConfig;
use crate::pipeline::load_dataset;

/// Sweep grid. `alpha`, `beta` and `gamma` are combined as a Cartesian
/// product and appended to `mixtures`; empty axes fall back to the base
/// config. `ablations` adds the real-only, pseudo-only and own-only
/// variants of every mixture.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub mixtures: Vec<[f64; 3]>,
    pub k: Vec<usize>,
    pub n_pseudo: Vec<usize>,
    pub ablations: bool,
}

impl GridSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading grid {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid grid {}", path.display()))
    }

    /// Mixture candidates in grid order, before feasibility checks.
    fn raw_mixtures(&self, base: MixtureWeights) -> Vec<[f64; 3]> {
        let mut out = self.mixtures.clone();
        for &a in &self.alpha {
            for &b in &self.beta {
                for &g in &self.gamma {
                    out.push([a, b, g]);
                }
            }
        }
        if out.is_empty() {
            out.push([base.alpha, base.beta, base.gamma]);
        }
        if self.ablations {
            let with_ablations = out
                .iter()
                .flat_map(|&[a, b, g]| {
                    let mut v = vec![[a, b, g]];
                    if MixtureWeights::new(a, b, g).is_ok() && a < 1.0 {
                        v.extend([[a, 1.0 - a, 0.0], [a, 0.0, 1.0 - a], [1.0, 0.0, 0.0]]);
                    }
                    v
                })
                .collect();
            out = with_ablations;
        }
        out
    }

    /// Deduplicated cells in first-seen order.
    pub fn cells(&self, cfg: &RunConfig) -> Vec<Cell> {
        let ks = if self.k.is_empty() { vec![cfg.neighbors.k] } else { self.k.clone() };
        let ns = if self.n_pseudo.is_empty() { vec![cfg.pseudo.n] } else { self.n_pseudo.clone() };
        let mut seen = HashSet::new();
        let mut cells = Vec::new();
        for mix in self.raw_mixtures(cfg.model.mix) {
            for &n_pseudo in &ns {
                for &k in &ks {
                    let cell = Cell { mix, k, n_pseudo };
                    if seen.insert(cell.key()) {
                        cells.push(cell);
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mix: [f64; 3],
    pub k: usize,
    pub n_pseudo: usize,
}

impl Cell {
    fn key(&self) -> String {
        format!("{:.9}/{:.9}/{:.9}/{}/{}", self.mix[0], self.mix[1], self.mix[2], self.k, self.n_pseudo)
    }
}

/// Ablation label of a mixture.
pub fn label(mix: [f64; 3]) -> &'static str {
    match (mix[1] > 0.0, mix[2] > 0.0) {
        (false, false) => "diffrec",
        (true, false) => "+real",
        (false, true) => "+pseudo",
        (true, true) => "+real&pseudo",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub best_epoch: usize,
    pub val_recall: Vec<f64>,
    pub val_ndcg: Vec<f64>,
    pub test_recall: Vec<f64>,
    pub test_ndcg: Vec<f64>,
    pub reads: AccessSnapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: Cell,
    pub label: &'static str,
    pub result: std::result::Result<CellMetrics, String>,
    pub best: bool,
}

pub struct SweepRun {
    pub dir: PathBuf,
    pub cutoffs: Vec<usize>,
    pub rows: Vec<SweepRow>,
}

impl SweepRun {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("cell\tlabel\talpha\tbeta\tgamma\tk\tn_pseudo\tstatus\tbest_epoch");
        for prefix in ["val_R", "val_N", "test_R", "test_N"] {
            for k in &self.cutoffs {
                let _ = write!(out, "\t{prefix}@{k}");
            }
        }
        out.push_str("\treal_rows\tpseudo_rows\tbest\n");
        for (i, r) in self.rows.iter().enumerate() {
            let c = &r.cell;
            let _ = write!(out, "{i}\t{}\t{}\t{}\t{}\t{}\t{}", r.label, c.mix[0], c.mix[1], c.mix[2], c.k, c.n_pseudo);
            match &r.result {
                Ok(m) => {
                    let _ = write!(out, "\tok\t{}", m.best_epoch);
                    for v in m.val_recall.iter().chain(&m.val_ndcg).chain(&m.test_recall).chain(&m.test_ndcg) {
                        let _ = write!(out, "\t{v:.6}");
                    }
                    let _ = write!(out, "\t{}\t{}", m.reads.real_rows, m.reads.pseudo_rows);
                }
                Err(reason) => {
                    let _ = write!(out, "\tskipped: {reason}\t");
                    for _ in 0..4 * self.cutoffs.len() + 2 {
                        out.push('\t');
                    }
                }
            }
            let _ = writeln!(out, "\t{}", if r.best { "*" } else { "" });
        }
        out
    }

    pub fn row(&self, label: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// `sweep` subcommand: trains one model per grid cell on the data stage of
/// `cfg` and tabulates validation and test metrics. The best cell is the
/// one with the highest validation recall at `train.eval_cutoff`.
pub fn run(cfg: &RunConfig, grid: &GridSpec) -> Result<SweepRun> {
    let dir = cfg.output_dir.join("sweep");
    echo_config(cfg, &dir)?;
    write_atomic(&dir.join("grid.toml"), toml::to_string(grid)?.as_bytes())?;

    let dataset = load_dataset(&cfg.data)?;
    let split = &dataset.split;
    let schedule = make_schedule(cfg.schedule)?;
    let mut cutoffs = cfg.eval.cutoffs.clone();
    if !cutoffs.contains(&cfg.train.eval_cutoff) {
        cutoffs.push(cfg.train.eval_cutoff);
    }
    let pick = cutoffs.iter().position(|&k| k == cfg.train.eval_cutoff).unwrap();

    let mut pseudo_by_n: HashMap<usize, PseudoUserMatrix> = HashMap::new();
    let mut rows = Vec::new();
    for cell in grid.cells(cfg) {
        let [a, b, g] = cell.mix;
        let label = label(cell.mix);
        let mix = match MixtureWeights::new(a, b, g) {
            Ok(m) => m,
            Err(e) => {
                warn!("sweep cell ({a}, {b}, {g}) skipped: {e}");
                rows.push(SweepRow { cell, label, result: Err(format!("alpha+beta+gamma = {}", a + b + g)), best: false });
                continue;
            }
        };
        let pseudo = match pseudo_by_n.entry(cell.n_pseudo) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => {
                e.insert(build_pseudo_users(&dataset.features, &cfg.pseudo.tfidf, cell.n_pseudo).context("stage pseudo")?)
            }
        };
        let pseudo = &*pseudo;
        let cache = build_cache(&split.train, pseudo, cell.k).context("stage neighbors")?;

        let mut cell_cfg = cfg.clone();
        cell_cfg.model.mix = mix;
        cell_cfg.neighbors.k = cell.k;
        cell_cfg.pseudo.n = cell.n_pseudo;
        info!("sweep cell {label} mix=({a}, {b}, {g}) k={} n={}", cell.k, cell.n_pseudo);
        let (outcome, ctx) = fit(&cell_cfg, split, pseudo, &cache)?;

        let val_users = evaluable_users(split, EvalTarget::Validation);
        let val_scores = infer_batch(&outcome.model, &val_users, &ctx, &schedule, &cell_cfg.train.inference());
        let val = evaluate_users(&val_users, val_scores.view(), split, EvalTarget::Validation, &cutoffs)?;
        let scorer = ModelScorer { model: outcome.model, schedule: schedule.clone(), inference: cell_cfg.train.inference() };
        let test = evaluate_scorer(&scorer, split, &ctx, &cutoffs)?;
        let metrics = CellMetrics {
            best_epoch: outcome.history.best_epoch,
            val_recall: val.mean_recall,
            val_ndcg: val.mean_ndcg,
            test_recall: test.mean_recall,
            test_ndcg: test.mean_ndcg,
            reads: ctx.counters.snapshot(),
        };
        rows.push(SweepRow { cell, label, result: Ok(metrics), best: false });
    }

    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.result.as_ref().ok().map(|m| (i, m.val_recall[pick])))
        .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
            Some((_, bv)) if bv >= v => acc,
            _ => Some((i, v)),
        });
    if let Some((i, _)) = best {
        rows[i].best = true;
    }
    let run = SweepRun { dir, cutoffs, rows };
    write_atomic(&run.dir.join("results.tsv"), run.to_tsv().as_bytes())?;
    info!("sweep wrote {} rows to {}", run.rows.len(), run.dir.display());
    Ok(run)
}
