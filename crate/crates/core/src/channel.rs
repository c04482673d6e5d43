//! Clustered mmWave channel with two-timescale evolution.
//!
//! Each user sees `K` clusters of `L` sub-paths. The first cluster points at
//! the user's geometric direction; the others keep a fixed angular offset from
//! it for the whole episode. Angles and path loss are refreshed from the user
//! geometry at every long block and stay frozen inside it. Complex path gains
//! follow a first-order Gauss-Markov process across short blocks with the
//! Jakes correlation `J0(2 pi f_d dt)`.

use crate::config::SystemConfig;
use crate::error::ConfigError;
use crate::linalg::norm_sqr;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use std::f64::consts::{PI, TAU};
use std::io::{self, Write};

/// Uniform planar array at the base station.
///
/// Element `(m, n)` sits `m` spacings along the horizontal axis and `n`
/// spacings along the vertical axis of the (tilted) array plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub n_x: usize,
    pub n_y: usize,
    pub spacing_wavelengths: f64,
    pub downtilt_deg: f64,
    pub carrier_hz: f64,
}

impl ArrayGeometry {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            n_x: cfg.array.n_x,
            n_y: cfg.array.n_y,
            spacing_wavelengths: cfg.array.spacing_wavelengths,
            downtilt_deg: cfg.array.downtilt_deg,
            carrier_hz: cfg.array.carrier_hz,
        }
    }

    pub fn n_bs(&self) -> usize {
        self.n_x * self.n_y
    }

    /// Unit-norm steering vector for a direction given relative to the array
    /// boresight (radians). Azimuth zero and elevation zero is broadside.
    pub fn array_response(&self, azimuth: f64, elevation: f64) -> Vec<Complex64> {
        let horizontal = elevation.cos() * azimuth.sin();
        let vertical = elevation.sin();
        let k = TAU * self.spacing_wavelengths;
        let scale = 1.0 / (self.n_bs() as f64).sqrt();
        let mut out = Vec::with_capacity(self.n_bs());
        for n in 0..self.n_y {
            for m in 0..self.n_x {
                let phase = k * (m as f64 * horizontal + n as f64 * vertical);
                out.push(Complex64::from_polar(scale, phase));
            }
        }
        out
    }

    /// Converts a global direction (azimuth in the ground plane measured from
    /// the array facing direction, elevation above the horizon) into angles
    /// relative to the down-tilted boresight.
    pub fn to_array_frame(&self, azimuth: f64, elevation: f64) -> (f64, f64) {
        let tilt = self.downtilt_deg.to_radians();
        let d = [
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        ];
        let along_boresight = d[0] * tilt.cos() - d[2] * tilt.sin();
        let along_vertical = d[0] * tilt.sin() + d[2] * tilt.cos();
        let local_el = along_vertical.clamp(-1.0, 1.0).asin();
        let local_az = d[1].atan2(along_boresight);
        (local_az, local_el)
    }
}

/// One cluster of propagation paths, angles in the global frame (radians).
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub azimuth: f64,
    pub elevation: f64,
    /// Mean power fraction; the fractions of a user sum to one.
    pub power: f64,
    /// Per sub-path (azimuth, elevation) offsets from the cluster centre.
    pub subpath_offsets: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn path_count(&self) -> usize {
        self.clusters.iter().map(|c| c.subpath_offsets.len()).sum()
    }

    /// Flattened `(azimuth, elevation)` of every sub-path.
    pub fn path_angles(&self) -> Vec<(f64, f64)> {
        self.clusters
            .iter()
            .flat_map(|c| {
                c.subpath_offsets
                    .iter()
                    .map(move |&(da, de)| (c.azimuth + da, c.elevation + de))
            })
            .collect()
    }
}

/// Per-user angular structure that persists for the whole episode.
#[derive(Debug, Clone, PartialEq)]
struct ClusterLayout {
    /// (azimuth, elevation) offset of each cluster centre from the geometric direction.
    centre_offsets: Vec<(f64, f64)>,
    powers: Vec<f64>,
    subpath_offsets: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel {
    /// Ground-plane position relative to the base station (m).
    pub position: [f64; 2],
    /// Ground-plane velocity (m/s).
    pub velocity: [f64; 2],
    pub clusters: ClusterSet,
    /// Linear path gain `10^(-PL/10)` fixed for the current long block.
    pub path_gain: f64,
    /// Complex small-scale gain per sub-path, each `CN(0, 1)` marginally.
    pub gains: Vec<Complex64>,
    /// Channel vector `h_i`.
    pub h: Vec<Complex64>,
    layout: ClusterLayout,
    /// Amplitude-scaled steering vector per sub-path.
    path_vectors: Vec<Vec<Complex64>>,
}

impl UserChannel {
    pub fn ground_distance(&self) -> f64 {
        self.position[0].hypot(self.position[1])
    }
}

/// Channel realisations of all users plus the episode's random stream.
#[derive(Debug, Clone)]
pub struct ChannelState {
    pub users: Vec<UserChannel>,
    pub geometry: ArrayGeometry,
    params: ChannelParams,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
struct ChannelParams {
    bs_height: f64,
    user_height: f64,
    wavelength: f64,
    speed: f64,
    pl_intercept_db: f64,
    pl_exponent: f64,
    gain_evolution: bool,
}

impl PartialEq for ChannelState {
    fn eq(&self, other: &Self) -> bool {
        self.users == other.users && self.geometry == other.geometry
    }
}

fn laplace(rng: &mut ChaCha8Rng, rms: f64) -> f64 {
    if rms == 0.0 {
        return 0.0;
    }
    let b = rms / std::f64::consts::SQRT_2;
    let u: f64 = rng.random::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

fn complex_gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Lag-one autocorrelation of a Jakes-spectrum fading process.
pub fn jakes_correlation(speed_mps: f64, wavelength_m: f64, dt: f64) -> f64 {
    let doppler = speed_mps / wavelength_m;
    libm::j0(TAU * doppler * dt)
}

/// Creates the initial channel state of one episode.
pub fn generate_episode(seed: u64, cfg: &SystemConfig) -> Result<ChannelState, ConfigError> {
    if cfg.num_users == 0 {
        return Err(ConfigError::Invalid(
            "episode needs at least one user".into(),
        ));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = ArrayGeometry::from_config(cfg);
    let params = ChannelParams {
        bs_height: cfg.geometry.bs_height_m,
        user_height: cfg.geometry.user_height_m,
        wavelength: cfg.wavelength_m(),
        speed: cfg.speed_mps(),
        pl_intercept_db: cfg.channel.pathloss_intercept_db,
        pl_exponent: cfg.channel.pathloss_exponent,
        gain_evolution: cfg.channel.gain_evolution,
    };
    let spread = cfg.channel.angular_spread_deg.to_radians();
    let cluster_el_jitter = Normal::new(0.0, spread).expect("finite spread");
    let r_max = cfg.geometry.cell_radius_m;
    let r_min = cfg.geometry.min_distance_m;

    let mut users = Vec::with_capacity(cfg.num_users);
    for _ in 0..cfg.num_users {
        let u: f64 = rng.random();
        let radius = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
        let bearing = rng.random::<f64>() * TAU - PI;
        let heading = rng.random::<f64>() * TAU - PI;
        let position = [radius * bearing.cos(), radius * bearing.sin()];
        let velocity = [params.speed * heading.cos(), params.speed * heading.sin()];

        let k = cfg.channel.clusters;
        let mut powers: Vec<f64> = (0..k)
            .map(|_| {
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                let z: f64 = StandardNormal.sample(&mut rng);
                u.powf(cfg.channel.cluster_power_r - 1.0)
                    * 10f64.powf(-0.1 * cfg.channel.cluster_power_zeta_db * z)
            })
            .collect();
        powers.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = powers.iter().sum();
        powers.iter_mut().for_each(|p| *p /= total);

        let centre_offsets = (0..k)
            .map(|c| {
                if c == 0 {
                    (0.0, 0.0)
                } else {
                    (
                        rng.random::<f64>() * TAU - PI,
                        cluster_el_jitter.sample(&mut rng),
                    )
                }
            })
            .collect();
        let subpath_offsets = (0..k)
            .map(|_| {
                (0..cfg.channel.subpaths)
                    .map(|_| (laplace(&mut rng, spread), laplace(&mut rng, spread)))
                    .collect()
            })
            .collect();

        users.push(UserChannel {
            position,
            velocity,
            clusters: ClusterSet {
                clusters: Vec::new(),
            },
            path_gain: 0.0,
            gains: Vec::new(),
            h: Vec::new(),
            layout: ClusterLayout {
                centre_offsets,
                powers,
                subpath_offsets,
            },
            path_vectors: Vec::new(),
        });
    }

    let mut state = ChannelState {
        users,
        geometry,
        params,
        rng,
    };
    state.refresh_large_scale();
    Ok(state)
}

impl ChannelState {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn channel(&self, user: usize) -> &[Complex64] {
        &self.users[user].h
    }

    pub fn channels(&self) -> Vec<&[Complex64]> {
        self.users.iter().map(|u| u.h.as_slice()).collect()
    }

    /// Short-block update: gains evolve, positions move, angles stay put.
    pub fn advance_short_block(&mut self, dt: f64) {
        let rho = jakes_correlation(self.params.speed, self.params.wavelength, dt);
        let innovation = (1.0 - rho * rho).max(0.0).sqrt();
        let evolve = self.params.gain_evolution;
        for user in &mut self.users {
            user.position[0] += user.velocity[0] * dt;
            user.position[1] += user.velocity[1] * dt;
            if evolve {
                for g in &mut user.gains {
                    *g = *g * rho + complex_gaussian(&mut self.rng) * innovation;
                }
            }
            recompute_h(user);
        }
    }

    /// Long-block update: angles and path loss follow the moved geometry,
    /// gains are redrawn.
    pub fn advance_long_block(&mut self) {
        self.refresh_large_scale();
    }

    fn refresh_large_scale(&mut self) {
        let dz = self.params.user_height - self.params.bs_height;
        for user in &mut self.users {
            let d = user.ground_distance().max(1e-3);
            let azimuth = user.position[1].atan2(user.position[0]);
            let elevation = dz.atan2(d);
            let d3 = d.hypot(dz);
            let pl_db = self.params.pl_intercept_db + 10.0 * self.params.pl_exponent * d3.log10();
            user.path_gain = 10f64.powf(-pl_db / 10.0);

            let layout = &user.layout;
            user.clusters = ClusterSet {
                clusters: layout
                    .centre_offsets
                    .iter()
                    .zip(&layout.powers)
                    .zip(&layout.subpath_offsets)
                    .map(|((&(da, de), &power), subs)| Cluster {
                        azimuth: wrap_angle(azimuth + da),
                        elevation: (elevation + de).clamp(-PI / 2.0, PI / 2.0),
                        power,
                        subpath_offsets: subs.clone(),
                    })
                    .collect(),
            };

            let n_bs = self.geometry.n_bs() as f64;
            user.path_vectors.clear();
            for cluster in &user.clusters.clusters {
                let amp = (n_bs * user.path_gain * cluster.power
                    / cluster.subpath_offsets.len() as f64)
                    .sqrt();
                for &(da, de) in &cluster.subpath_offsets {
                    let (az, el) = self
                        .geometry
                        .to_array_frame(cluster.azimuth + da, cluster.elevation + de);
                    let a = self.geometry.array_response(az, el);
                    user.path_vectors
                        .push(a.into_iter().map(|z| z * amp).collect());
                }
            }
            user.gains = (0..user.path_vectors.len())
                .map(|_| complex_gaussian(&mut self.rng))
                .collect();
            recompute_h(user);
        }
    }

    /// Writes one row per user with `re,im` pairs for every antenna.
    pub fn write_channels_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.geometry.n_bs();
        let header: Vec<String> = (0..n)
            .flat_map(|k| [format!("re{k}"), format!("im{k}")])
            .collect();
        writeln!(out, "user,{}", header.join(","))?;
        for (i, user) in self.users.iter().enumerate() {
            let row: Vec<String> = user
                .h
                .iter()
                .flat_map(|z| [format!("{:e}", z.re), format!("{:e}", z.im)])
                .collect();
            writeln!(out, "{i},{}", row.join(","))?;
        }
        Ok(())
    }
}

fn recompute_h(user: &mut UserChannel) {
    let n = user.path_vectors.first().map_or(0, Vec::len);
    let mut h = vec![Complex64::new(0.0, 0.0); n];
    for (g, v) in user.gains.iter().zip(&user.path_vectors) {
        for (hk, vk) in h.iter_mut().zip(v) {
            *hk += g * vk;
        }
    }
    debug_assert!(norm_sqr(&h).is_finite());
    user.h = h;
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}
