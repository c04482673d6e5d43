//! Combinatorial user selection maximising the one-slot weighted sum-rate.
//!
//! All schedulers break ties towards the lowest user index, the smallest `k`
//! or the lexicographically smallest set, so identical inputs always give
//! identical selections.

use crate::codebook::BeamAssignment;
use crate::error::ScheduleError;
use crate::precoder::{normalize_set, EffectiveChannels, SelectionResult};
use std::fmt;
use std::str::FromStr;

/// Inputs of one scheduling decision.
#[derive(Debug, Clone, Copy)]
pub struct SchedulerContext<'a> {
    /// `w_i = 1 / R_i(t-1)`.
    pub weights: &'a [f64],
    pub channels: &'a EffectiveChannels,
    pub beams: &'a BeamAssignment,
    pub n_max: usize,
}

impl SchedulerContext<'_> {
    pub fn num_users(&self) -> usize {
        self.channels.num_users()
    }

    /// Interference-free scores `w_i log2(1 + P |u_ii|^2 / sigma_i^2)`.
    pub fn scores(&self) -> Vec<f64> {
        (0..self.num_users())
            .map(|i| self.channels.interference_free_score(i, self.weights[i]))
            .collect()
    }

    /// Users by descending score, lowest index first among equal scores.
    pub fn ranked_users(&self) -> Vec<usize> {
        let scores = self.scores();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order
    }
}

/// A user-selection policy usable by the episode driver.
pub trait UserSelector: Send + Sync {
    fn name(&self) -> String;
    fn select(&self, ctx: &SchedulerContext<'_>) -> Result<SelectionResult, ScheduleError>;
}

/// Greedy user addition.
///
/// Starting from the empty set, repeatedly add the user that maximises
/// `Q(M + {i})`; stop as soon as the best addition does not strictly improve
/// `Q` or `n_max` users are in. Sets that cannot be zero-forced score
/// negative infinity.
pub fn greedy_select(ctx: &SchedulerContext<'_>) -> SelectionResult {
    greedy_select_traced(ctx).0
}

/// Greedy selection together with the accepted `Q` after each addition.
pub fn greedy_select_traced(ctx: &SchedulerContext<'_>) -> (SelectionResult, Vec<f64>) {
    let n = ctx.num_users();
    let mut chosen: Vec<usize> = Vec::new();
    let mut current = SelectionResult::empty(n);
    let mut trajectory = Vec::new();

    for _ in 0..ctx.n_max.min(n) {
        let mut best: Option<SelectionResult> = None;
        for candidate in (0..n).filter(|i| !chosen.contains(i)) {
            let mut set = chosen.clone();
            set.push(candidate);
            if let Ok(r) = ctx.channels.evaluate_set(&set, ctx.weights) {
                if best.as_ref().is_none_or(|b| r.q > b.q) {
                    best = Some(r);
                }
            }
        }
        match best {
            Some(r) if r.q > current.q => {
                chosen = r.selected.clone();
                trajectory.push(r.q);
                current = r;
            }
            _ => break,
        }
    }
    (current, trajectory)
}

/// The `k` users with the largest interference-free scores, zero-forced.
///
/// A singular chosen set is reported as infeasible and nobody is served.
pub fn topk_select(ctx: &SchedulerContext<'_>, k: usize) -> Result<SelectionResult, ScheduleError> {
    if k == 0 || k > ctx.n_max {
        return Err(ScheduleError::InvalidK {
            k,
            n_max: ctx.n_max,
        });
    }
    let n = ctx.num_users();
    let mut set: Vec<usize> = ctx.ranked_users().into_iter().take(k.min(n)).collect();
    set.sort_unstable();
    Ok(evaluate_or_infeasible(ctx, set))
}

pub(crate) fn evaluate_or_infeasible(
    ctx: &SchedulerContext<'_>,
    set: Vec<usize>,
) -> SelectionResult {
    match ctx.channels.evaluate_set(&set, ctx.weights) {
        Ok(r) => r,
        Err(_) => SelectionResult::infeasible(ctx.num_users(), set),
    }
}

/// Best top-k over `k = 1..=n_max`, smallest `k` on ties.
pub fn adaptive_topk_select(ctx: &SchedulerContext<'_>) -> SelectionResult {
    let n = ctx.num_users();
    let ranked = ctx.ranked_users();
    let mut best: Option<SelectionResult> = None;
    for k in 1..=ctx.n_max.min(n) {
        let mut set = ranked[..k].to_vec();
        set.sort_unstable();
        let r = evaluate_or_infeasible(ctx, set);
        if best.as_ref().is_none_or(|b| r.q > b.q) {
            best = Some(r);
        }
    }
    best.unwrap_or_else(|| SelectionResult::empty(n))
}

/// Number of non-empty subsets of at most `n_max` out of `users`.
pub fn subset_count(users: usize, n_max: usize) -> u128 {
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    for m in 1..=n_max.min(users) {
        binom = binom * (users - m + 1) as u128 / m as u128;
        total += binom;
    }
    total
}

/// Evaluates every non-empty subset of size at most `n_max`.
///
/// Subsets are visited in lexicographic order and only strictly better ones
/// replace the incumbent, so ties go to the lexicographically smallest set.
pub fn exhaustive_select(
    ctx: &SchedulerContext<'_>,
    cap: u64,
) -> Result<SelectionResult, ScheduleError> {
    let n = ctx.num_users();
    let subsets = subset_count(n, ctx.n_max);
    if subsets > cap as u128 {
        return Err(ScheduleError::CapExceeded { subsets, cap });
    }
    let mut best: Option<SelectionResult> = None;
    let mut stack: Vec<usize> = Vec::with_capacity(ctx.n_max);
    visit_subsets(n, ctx.n_max.min(n), &mut stack, &mut |set| {
        if let Ok(r) = ctx.channels.evaluate_set(set, ctx.weights) {
            if best.as_ref().is_none_or(|b| r.q > b.q) {
                best = Some(r);
            }
        }
    });
    Ok(best.unwrap_or_else(|| SelectionResult::empty(n)))
}

fn visit_subsets(n: usize, max_len: usize, stack: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    let start = stack.last().map_or(0, |&l| l + 1);
    for i in start..n {
        stack.push(i);
        f(stack);
        if stack.len() < max_len {
            visit_subsets(n, max_len, stack, f);
        }
        stack.pop();
    }
}

/// Named scheduling policies available from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedulerKind {
    Greedy,
    Top1,
    TopN,
    Adaptive,
    Exhaustive,
    Ml,
    /// Selects nobody; measures harness overhead.
    Idle,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 7] = [
        SchedulerKind::Greedy,
        SchedulerKind::Top1,
        SchedulerKind::TopN,
        SchedulerKind::Adaptive,
        SchedulerKind::Exhaustive,
        SchedulerKind::Ml,
        SchedulerKind::Idle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::Greedy => "greedy",
            SchedulerKind::Top1 => "top1",
            SchedulerKind::TopN => "topN",
            SchedulerKind::Adaptive => "adaptive",
            SchedulerKind::Exhaustive => "exhaustive",
            SchedulerKind::Ml => "ml",
            SchedulerKind::Idle => "idle",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                format!("unknown scheduler `{s}`; expected greedy, top1, topN, adaptive, exhaustive, ml or idle")
            })
    }
}

pub struct Greedy;

impl UserSelector for Greedy {
    fn name(&self) -> String {
        "greedy".into()
    }

    fn select(&self, ctx: &SchedulerContext<'_>) -> Result<SelectionResult, ScheduleError> {
        Ok(greedy_select(ctx))
    }
}

/// Top-k with a fixed `k`, or `k = n_max` when `k` is `None`.
pub struct TopK(pub Option<usize>);

impl UserSelector for TopK {
    fn name(&self) -> String {
        match self.0 {
            Some(k) => format!("top{k}"),
            None => "topN".into(),
        }
    }

    fn select(&self, ctx: &SchedulerContext<'_>) -> Result<SelectionResult, ScheduleError> {
        topk_select(ctx, self.0.unwrap_or(ctx.n_max))
    }
}

pub struct AdaptiveTopK;

impl UserSelector for AdaptiveTopK {
    fn name(&self) -> String {
        "adaptive".into()
    }

    fn select(&self, ctx: &SchedulerContext<'_>) -> Result<SelectionResult, ScheduleError> {
        Ok(adaptive_topk_select(ctx))
    }
}

pub struct Exhaustive {
    pub cap: u64,
}

impl UserSelector for Exhaustive {
    fn name(&self) -> String {
        "exhaustive".into()
    }

    fn select(&self, ctx: &SchedulerContext<'_>) -> Result<SelectionResult, ScheduleError> {
        exhaustive_select(ctx, self.cap)
    }
}

pub struct Idle;

impl UserSelector for Idle {
    fn name(&self) -> String {
        "idle".into()
    }

    fn select(&self, ctx: &SchedulerContext<'_>) -> Result<SelectionResult, ScheduleError> {
        Ok(SelectionResult::empty(ctx.num_users()))
    }
}

/// Forces a fixed set every slot; used to exercise starvation behaviour.
pub struct FixedSet(pub Vec<usize>);

impl UserSelector for FixedSet {
    fn name(&self) -> String {
        "fixed".into()
    }

    fn select(&self, ctx: &SchedulerContext<'_>) -> Result<SelectionResult, ScheduleError> {
        let set = normalize_set(&self.0, ctx.num_users())?;
        Ok(evaluate_or_infeasible(ctx, set))
    }
}
