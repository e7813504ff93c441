//! Target-shuffling significance of (fund, factor) fits.
//!
//! The observed `R²` of a ridge fit is compared with the `R²` of refits on
//! randomly permuted targets (factor order held fixed). The add-one p-value
//! `(1 + #{R²_shuffled ≥ R²_observed}) / (N + 1)` is never zero, so the
//! P-Value Score `-ln p` is always finite.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{total_sum_of_squares, PolyFit, PreparedDesign, DEFAULT_LAMBDA};
use crate::panel::{align, AlignedPair, MonthIndex, MonthlyPanel, MIN_OVERLAP};
use crate::rng::substream;

pub const MIN_SHUFFLES: usize = 50;

/// Default relevance threshold: `-ln 0.05 ≈ 3.0`.
pub const DEFAULT_SCORE_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShuffleConfig {
    pub n_shuffles: usize,
    pub seed: u64,
    pub window_months: usize,
    pub lambda: f64,
}

impl Default for ShuffleConfig {
    fn default() -> Self {
        Self {
            n_shuffles: 1000,
            seed: 0,
            window_months: 36,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl ShuffleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_shuffles < MIN_SHUFFLES {
            return Err(Error::invalid(format!(
                "n_shuffles must be at least {MIN_SHUFFLES}, got {}",
                self.n_shuffles
            )));
        }
        if self.window_months < MIN_OVERLAP {
            return Err(Error::invalid(format!(
                "window_months must be at least {MIN_OVERLAP}, got {}",
                self.window_months
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueScore {
    pub fund: String,
    pub factor: String,
    pub as_of: MonthIndex,
    pub r2_observed: f64,
    pub p_value: f64,
    pub score: f64,
    /// Constant target: nothing to explain, score pinned at 0.
    #[serde(default)]
    pub degenerate: bool,
}

/// Relevant factors `Γ` of one fund at one date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSelection {
    pub fund: String,
    pub as_of: MonthIndex,
    pub gamma: BTreeSet<String>,
    pub threshold: f64,
}

/// Fisher–Yates shuffle.
fn shuffle_in_place<R: Rng>(v: &mut [f64], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Observed ridge fit plus its shuffling score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredFit {
    pub fit: PolyFit,
    pub score: PValueScore,
}

/// Scores one pair; the permutation stream is keyed by `(fund, factor, last month)`.
pub fn score_pair(fund: &str, factor: &str, pair: &AlignedPair, config: &ShuffleConfig) -> Result<ScoredFit> {
    config.validate()?;
    if pair.len() < MIN_OVERLAP {
        return Err(Error::InsufficientData {
            have: pair.len(),
            need: MIN_OVERLAP,
        });
    }
    let as_of = *pair.months.last().expect("non-empty pair");
    let design = PreparedDesign::new(&pair.x, config.lambda)?;
    let fit = design.fit(&pair.y);
    let sst = total_sum_of_squares(&pair.y);
    let observed = fit.r_squared;
    let degenerate = !(sst > 0.0);

    let mut exceed = 0usize;
    if !degenerate {
        let month = as_of.to_string();
        let mut rng = substream(config.seed, "shuffle", &[fund.as_bytes(), factor.as_bytes(), month.as_bytes()]);
        let mut y = pair.y.clone();
        for _ in 0..config.n_shuffles {
            shuffle_in_place(&mut y, &mut rng);
            if design.r_squared(&y, sst) >= observed {
                exceed += 1;
            }
        }
    } else {
        // every shuffled R² is 0 and ties count
        exceed = config.n_shuffles;
    }
    let p_value = (1 + exceed) as f64 / (config.n_shuffles + 1) as f64;
    Ok(ScoredFit {
        fit,
        score: PValueScore {
            fund: fund.to_string(),
            factor: factor.to_string(),
            as_of,
            r2_observed: observed,
            p_value,
            score: 0.0 - p_value.ln(),
            degenerate,
        },
    })
}

/// P-Value Score of an anonymous pair.
pub fn pvalue_score(pair: &AlignedPair, config: &ShuffleConfig) -> Result<PValueScore> {
    Ok(score_pair("", "", pair, config)?.score)
}

/// Output of a rolling scoring pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RollingScores {
    pub entries: Vec<ScoredFit>,
    /// `(factor, month)` windows skipped for insufficient or degenerate data.
    pub skipped: Vec<(String, MonthIndex)>,
}

impl RollingScores {
    pub fn scores(&self) -> Vec<PValueScore> {
        self.entries.iter().map(|e| e.score.clone()).collect()
    }
}

/// Months whose full trailing window lies inside the panel.
pub fn window_end_months(panel: &MonthlyPanel, window: usize) -> Vec<MonthIndex> {
    let first = panel.span.0.offset(window as i64 - 1);
    if first > panel.span.1 {
        return Vec::new();
    }
    MonthIndex::range_inclusive(first, panel.span.1).collect()
}

/// Scores every factor against `fund` at every month whose trailing window
/// fits inside the panel, optionally restricted to `months`.
pub fn rolling_fits(
    panel: &MonthlyPanel,
    fund: &str,
    config: &ShuffleConfig,
    months: Option<(MonthIndex, MonthIndex)>,
) -> Result<RollingScores> {
    config.validate()?;
    let fund_rec = panel.fund(fund)?;
    let ends: Vec<MonthIndex> = window_end_months(panel, config.window_months)
        .into_iter()
        .filter(|m| months.is_none_or(|(a, b)| *m >= a && *m <= b))
        .collect();
    let jobs: Vec<(usize, MonthIndex)> = (0..panel.factors.len())
        .flat_map(|j| ends.iter().map(move |m| (j, *m)))
        .collect();
    let results: Vec<(usize, MonthIndex, Option<ScoredFit>)> = jobs
        .par_iter()
        .map(|&(j, t)| {
            let factor = &panel.factors[j];
            let from = t.offset(1 - config.window_months as i64);
            // labelled by the window end even when the fund's last month is missing
            let scored = align(&fund_rec.returns, &factor.returns, (from, t))
                .and_then(|pair| score_pair(fund, &factor.id, &pair, config))
                .map(|mut s| {
                    s.score.as_of = t;
                    s
                })
                .ok();
            (j, t, scored)
        })
        .collect();
    let mut out = RollingScores::default();
    for (j, t, r) in results {
        match r {
            Some(s) => out.entries.push(s),
            None => out.skipped.push((panel.factors[j].id.clone(), t)),
        }
    }
    // month-major order
    out.entries.sort_by_key(|e| e.score.as_of);
    Ok(out)
}

/// Dynamic P-Value Score series of `fund` against every factor.
pub fn rolling_scores(panel: &MonthlyPanel, fund: &str, config: &ShuffleConfig) -> Result<Vec<PValueScore>> {
    Ok(rolling_fits(panel, fund, config, None)?.scores())
}

/// Factors whose score is at least `threshold`.
pub fn select_factors(scores: &[PValueScore], threshold: f64) -> Result<FactorSelection> {
    let first = scores
        .first()
        .ok_or_else(|| Error::invalid("select_factors needs at least one score"))?;
    if let Some(s) = scores.iter().find(|s| s.fund != first.fund || s.as_of != first.as_of) {
        return Err(Error::invalid(format!(
            "mixed inputs: ({}, {}) vs ({}, {})",
            first.fund, first.as_of, s.fund, s.as_of
        )));
    }
    Ok(FactorSelection {
        fund: first.fund.clone(),
        as_of: first.as_of,
        gamma: scores
            .iter()
            .filter(|s| s.score >= threshold)
            .map(|s| s.factor.clone())
            .collect(),
        threshold,
    })
}

/// Writes `fund,factor,date,r2,p_value,score`.
pub fn write_scores_csv<W: Write>(scores: &[PValueScore], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
    w.write_record(["fund", "factor", "date", "r2", "p_value", "score"]).map_err(err)?;
    for s in scores {
        w.write_record([
            s.fund.as_str(),
            s.factor.as_str(),
            &s.as_of.to_string(),
            &s.r2_observed.to_string(),
            &s.p_value.to_string(),
            &s.score.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<scores csv>", e))
}

#[derive(Deserialize)]
struct ScoreRow {
    fund: String,
    factor: String,
    date: MonthIndex,
    r2: f64,
    p_value: f64,
    score: f64,
}

pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<PValueScore>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ScoreRow>().enumerate() {
        let r = row.map_err(|e| Error::Parse {
            file: path.display().to_string(),
            row: i + 2,
            message: e.to_string(),
        })?;
        out.push(PValueScore {
            fund: r.fund,
            factor: r.factor,
            as_of: r.date,
            r2_observed: r.r2,
            p_value: r.p_value,
            score: r.score,
            degenerate: r.p_value == 1.0 && r.r2 == 0.0,
        });
    }
    Ok(out)
}
