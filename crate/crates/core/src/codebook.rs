//! Grid-of-beams analog codebook and per-user beam selection.

use crate::channel::{ArrayGeometry, ChannelState};
use crate::config::SystemConfig;
use crate::error::ConfigError;
use crate::linalg::inner;
use num_complex::Complex64;
use std::io::{self, Write};

/// Ordered set of unit-norm steering vectors on a uniform angular grid.
///
/// Beam `k` sits at azimuth column `k % n_az` and elevation row `k / n_az`,
/// so neighbouring indices are neighbouring azimuths. Grid points are the
/// centres of `n_az` (resp. `n_el`) equal cells spanning the configured open
/// ranges, relative to the array boresight.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    beams: Vec<Vec<Complex64>>,
    angles_deg: Vec<(f64, f64)>,
    pub n_az: usize,
    pub n_el: usize,
    pub az_range_deg: [f64; 2],
    pub el_range_deg: [f64; 2],
}

impl Codebook {
    pub fn build(
        geometry: &ArrayGeometry,
        n_az: usize,
        n_el: usize,
        az_range_deg: [f64; 2],
        el_range_deg: [f64; 2],
        max_entries: usize,
    ) -> Result<Self, ConfigError> {
        if n_az == 0 || n_el == 0 {
            return Err(ConfigError::Invalid(
                "codebook grid must be at least 1x1".into(),
            ));
        }
        let entries = n_az
            .checked_mul(n_el)
            .and_then(|b| b.checked_mul(geometry.n_bs()))
            .filter(|&e| e <= max_entries)
            .ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "{n_az}x{n_el} codebook over {} antennas exceeds the {max_entries}-entry budget",
                    geometry.n_bs()
                ))
            })?;
        let cell = |range: [f64; 2], n: usize, i: usize| {
            range[0] + (i as f64 + 0.5) * (range[1] - range[0]) / n as f64
        };
        let mut beams = Vec::with_capacity(entries / geometry.n_bs());
        let mut angles_deg = Vec::with_capacity(n_az * n_el);
        for e in 0..n_el {
            let el = cell(el_range_deg, n_el, e);
            for a in 0..n_az {
                let az = cell(az_range_deg, n_az, a);
                beams.push(geometry.array_response(az.to_radians(), el.to_radians()));
                angles_deg.push((az, el));
            }
        }
        Ok(Self {
            beams,
            angles_deg,
            n_az,
            n_el,
            az_range_deg,
            el_range_deg,
        })
    }

    pub fn from_config(cfg: &SystemConfig) -> Result<Self, ConfigError> {
        let c = &cfg.codebook;
        Self::build(
            &ArrayGeometry::from_config(cfg),
            c.n_az,
            c.n_el,
            c.az_range_deg,
            c.el_range_deg,
            c.max_entries,
        )
    }

    /// Wraps explicit beam vectors; used for hand-built fixtures.
    pub fn from_beams(beams: Vec<Vec<Complex64>>) -> Self {
        let n = beams.len();
        Self {
            angles_deg: vec![(0.0, 0.0); n],
            beams,
            n_az: n,
            n_el: 1,
            az_range_deg: [0.0, 0.0],
            el_range_deg: [0.0, 0.0],
        }
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    pub fn beam(&self, k: usize) -> &[Complex64] {
        &self.beams[k]
    }

    pub fn beams(&self) -> &[Vec<Complex64>] {
        &self.beams
    }

    /// (azimuth, elevation) of beam `k` in degrees.
    pub fn angles_deg(&self, k: usize) -> (f64, f64) {
        self.angles_deg[k]
    }

    /// Index maximising `|h^H g_k|^2`, lowest index on exact ties.
    pub fn select_best_beam(&self, h: &[Complex64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (k, g) in self.beams.iter().enumerate() {
            let gain = inner(h, g).norm_sqr();
            if best.is_none_or(|(_, b)| gain > b) {
                best = Some((k, gain));
            }
        }
        best.map(|(k, _)| k)
    }

    /// Beam sweep: each user reports its best beam index.
    pub fn sweep_assignments(&self, state: &ChannelState) -> BeamAssignment {
        let indices = state
            .users
            .iter()
            .map(|u| self.select_best_beam(&u.h).expect("non-empty codebook"))
            .collect::<Vec<_>>();
        let vectors = indices.iter().map(|&k| self.beams[k].clone()).collect();
        BeamAssignment { indices, vectors }
    }

    pub fn write_grid_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "index,azimuth_deg,elevation_deg")?;
        for (k, (az, el)) in self.angles_deg.iter().enumerate() {
            writeln!(out, "{k},{az},{el}")?;
        }
        Ok(())
    }
}

/// Analog beam per user, fixed for one long block.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamAssignment {
    /// Codebook index `k_i` (zero-based).
    pub indices: Vec<usize>,
    /// `f*_RF,i`, a copy of the codebook beam `indices[i]`.
    pub vectors: Vec<Vec<Complex64>>,
}

impl BeamAssignment {
    pub fn num_users(&self) -> usize {
        self.indices.len()
    }
}
