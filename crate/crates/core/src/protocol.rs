//! Two-timescale episode driver.
//!
//! Slot `t` (1-based) runs:
//! 1. a beam sweep when `t = 1, N_s + 1, 2 N_s + 1, ...`;
//! 2. effective-channel acquisition `u_ij = h_i^H f*_RF,j`;
//! 3. user selection and ZF precoding (the only timed step);
//! 4. transmission, the EMA update of `R_i` and the new weights `1 / R_i`.
//!
//! The channel then advances by one short block, or by a long block when the
//! next slot starts one. Channel evolution draws only from the episode's own
//! random stream, so every scheduler sees the same trajectory for a seed.

use crate::channel::{generate_episode, ChannelState};
use crate::codebook::{BeamAssignment, Codebook};
use crate::config::SystemConfig;
use crate::error::{ConfigError, SimError};
use crate::metrics::{min_chordal_distance, proportional_fairness};
use crate::precoder::{EffectiveChannels, SelectionResult};
use crate::schedulers::{SchedulerContext, UserSelector};
use std::time::Instant;

/// `(1 - delta) R_prev + delta r`.
pub fn update_cumulative_rate(previous: f64, rate: f64, delta: f64) -> f64 {
    (1.0 - delta) * previous + delta * rate
}

/// Independent random streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Train,
    Test,
    Custom(u64),
}

impl SeedStream {
    fn tag(self) -> u64 {
        match self {
            SeedStream::Train => 0x7472_6169_6e00_0001,
            SeedStream::Test => 0x7465_7374_0000_0002,
            SeedStream::Custom(x) => x,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Channel seed of episode `index` in `stream`.
pub fn episode_seed(master: u64, stream: SeedStream, index: usize) -> u64 {
    splitmix64(splitmix64(master ^ stream.tag()) ^ splitmix64(index as u64))
}

/// Per-slot log entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub t: usize,
    pub beam_sweep: bool,
    pub beam_indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub selected: Vec<usize>,
    pub feasible: bool,
    pub q: f64,
    pub rates: Vec<f64>,
    /// `R_i(t)` after the update.
    pub cumulative: Vec<f64>,
    pub slot_time_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub episode: usize,
    pub seed: u64,
    pub scheduler: String,
    /// `R_i(T)`.
    pub final_rates: Vec<f64>,
    pub pf_nats: f64,
    pub beam_sweeps: usize,
    /// Users actually served per slot.
    pub selected_counts: Vec<usize>,
    /// Minimum chordal distance per slot, `None` when fewer than two users were served.
    pub min_chordal: Vec<Option<f64>>,
    pub slot_times_us: Vec<f64>,
    pub slots: Option<Vec<SlotRecord>>,
}

/// Read-only view handed to slot observers after scheduling.
pub struct SlotView<'a> {
    pub t: usize,
    pub ctx: &'a SchedulerContext<'a>,
    pub state: &'a ChannelState,
    pub selection: &'a SelectionResult,
}

/// Holds the configuration and the shared codebook for a batch of episodes.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub config: SystemConfig,
    pub codebook: Codebook,
}

impl Simulator {
    pub fn new(config: SystemConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let codebook = Codebook::from_config(&config)?;
        Ok(Self { config, codebook })
    }

    pub fn run_episode(
        &self,
        episode: usize,
        seed: u64,
        selector: &dyn UserSelector,
        keep_slots: bool,
    ) -> Result<EpisodeTrace, SimError> {
        self.run_episode_observed(episode, seed, selector, keep_slots, &mut |_| {})
    }

    /// Runs one episode, calling `observer` after every scheduling decision.
    pub fn run_episode_observed(
        &self,
        episode: usize,
        seed: u64,
        selector: &dyn UserSelector,
        keep_slots: bool,
        observer: &mut dyn FnMut(&SlotView<'_>),
    ) -> Result<EpisodeTrace, SimError> {
        let cfg = &self.config;
        let n = cfg.num_users;
        let mut state = generate_episode(seed, cfg)?;
        let mut beams: Option<BeamAssignment> = None;
        let mut cumulative = vec![1.0; n];
        let mut sweeps = 0;
        let mut selected_counts = Vec::with_capacity(cfg.steps);
        let mut min_chordal = Vec::with_capacity(cfg.steps);
        let mut slot_times = Vec::with_capacity(cfg.steps);
        let mut slots = keep_slots.then(|| Vec::with_capacity(cfg.steps));
        let scheduler = selector.name();

        for t in 1..=cfg.steps {
            let sweep = (t - 1) % cfg.n_s == 0;
            if sweep {
                beams = Some(self.codebook.sweep_assignments(&state));
                sweeps += 1;
            }
            let beams_now = beams.as_ref().expect("first slot sweeps");
            let channels = EffectiveChannels::measure(
                &state,
                beams_now,
                cfg.noise_w,
                cfg.power_w,
                cfg.scheduler.max_condition,
            );
            let weights: Vec<f64> = cumulative.iter().map(|r| 1.0 / r).collect();
            let ctx = SchedulerContext {
                weights: &weights,
                channels: &channels,
                beams: beams_now,
                n_max: cfg.n_max,
            };

            let started = Instant::now();
            let selection = selector.select(&ctx).map_err(|source| SimError::Schedule {
                scheduler: scheduler.clone(),
                slot: t,
                source,
            })?;
            let elapsed_us = started.elapsed().as_secs_f64() * 1e6;

            let recomputed: f64 = weights
                .iter()
                .zip(&selection.rates)
                .map(|(w, r)| w * r)
                .sum();
            if (recomputed - selection.q).abs() > 1e-12 * recomputed.abs().max(1.0) {
                return Err(SimError::Inconsistent {
                    slot: t,
                    reported: selection.q,
                    recomputed,
                });
            }

            observer(&SlotView {
                t,
                ctx: &ctx,
                state: &state,
                selection: &selection,
            });

            for (r, &rate) in cumulative.iter_mut().zip(&selection.rates) {
                *r = update_cumulative_rate(*r, rate, cfg.delta);
            }
            let served = selection.served();
            selected_counts.push(served);
            min_chordal.push(if served >= 2 {
                Some(min_chordal_distance(
                    &state.channels(),
                    &selection.selected,
                )?)
            } else {
                None
            });
            slot_times.push(elapsed_us);
            if let Some(log) = slots.as_mut() {
                log.push(SlotRecord {
                    t,
                    beam_sweep: sweep,
                    beam_indices: beams_now.indices.clone(),
                    weights: weights.clone(),
                    selected: selection.selected.clone(),
                    feasible: selection.feasible,
                    q: selection.q,
                    rates: selection.rates.clone(),
                    cumulative: cumulative.clone(),
                    slot_time_us: elapsed_us,
                });
            }

            if t < cfg.steps {
                if t % cfg.n_s == 0 {
                    state.advance_long_block();
                } else {
                    state.advance_short_block(cfg.channel.block_duration_s);
                }
            }
        }

        Ok(EpisodeTrace {
            episode,
            seed,
            scheduler,
            pf_nats: proportional_fairness(&cumulative)?,
            final_rates: cumulative,
            beam_sweeps: sweeps,
            selected_counts,
            min_chordal,
            slot_times_us: slot_times,
            slots,
        })
    }

    /// Runs episodes `indices` of `stream` sequentially.
    pub fn run_episodes(
        &self,
        stream: SeedStream,
        indices: std::ops::Range<usize>,
        selector: &dyn UserSelector,
        keep_slots: bool,
    ) -> Result<Vec<EpisodeTrace>, SimError> {
        indices
            .map(|e| {
                self.run_episode(
                    e,
                    episode_seed(self.config.seed, stream, e),
                    selector,
                    keep_slots,
                )
            })
            .collect()
    }
}

/// Times one scheduling call in microseconds.
pub fn slot_timing(
    selector: &dyn UserSelector,
    ctx: &SchedulerContext<'_>,
) -> Result<(SelectionResult, f64), crate::error::ScheduleError> {
    let started = Instant::now();
    let r = selector.select(ctx)?;
    Ok((r, started.elapsed().as_secs_f64() * 1e6))
}
