//! Zero-forcing digital precoding over a selected user set.
//!
//! For a set `M = {i_1 < ... < i_M}` the effective channel matrix is
//! `G[a][b] = u[i_a][i_b]`, the unnormalised precoder is
//! `F_BB = G^H (G G^H)^{-1}` (equal to `G^{-1}` for the square full-rank `G`
//! used here) and every column is rescaled so that the composite analog and
//! digital column carries `P / M` watts.

use crate::channel::ChannelState;
use crate::codebook::BeamAssignment;
use crate::error::PrecoderError;
use crate::linalg::{inner, CMatrix};
use num_complex::Complex64;

/// Default bound on `cond_1(G)` above which a set counts as infeasible.
pub const DEFAULT_MAX_CONDITION: f64 = 1e12;

/// Everything the base station knows after effective-channel feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    /// `u[i][j] = h_i^H f*_RF,j`.
    pub u: CMatrix,
    /// Gram matrix of the assigned analog beams, `F_RF^H F_RF`.
    pub beam_gram: CMatrix,
    /// Noise variance per user (W).
    pub noise: Vec<f64>,
    /// Transmit power budget (W).
    pub power: f64,
    pub max_condition: f64,
}

impl EffectiveChannels {
    /// Builds `u` from full channels and the current beam assignment.
    pub fn measure(
        state: &ChannelState,
        beams: &BeamAssignment,
        noise: f64,
        power: f64,
        max_condition: f64,
    ) -> Self {
        let n = state.num_users();
        let u = CMatrix::from_fn(n, n, |i, j| inner(state.channel(i), &beams.vectors[j]));
        Self::from_parts(u, &beams.vectors, vec![noise; n], power, max_condition)
    }

    /// Builds the record from an explicit `u` and analog beam vectors.
    pub fn from_parts(
        u: CMatrix,
        analog: &[Vec<Complex64>],
        noise: Vec<f64>,
        power: f64,
        max_condition: f64,
    ) -> Self {
        let n = analog.len();
        let beam_gram = CMatrix::from_fn(n, n, |i, j| inner(&analog[i], &analog[j]));
        Self {
            u,
            beam_gram,
            noise,
            power,
            max_condition,
        }
    }

    pub fn num_users(&self) -> usize {
        self.u.rows()
    }

    /// Interference-free weighted rate `w_i log2(1 + P |u_ii|^2 / sigma_i^2)`.
    pub fn interference_free_score(&self, user: usize, weight: f64) -> f64 {
        weight * (1.0 + self.power * self.u[(user, user)].norm_sqr() / self.noise[user]).log2()
    }

    /// `G(M)`, rows and columns in ascending user order.
    pub fn effective_submatrix(&self, set: &[usize]) -> Result<CMatrix, PrecoderError> {
        let set = normalize_set(set, self.num_users())?;
        Ok(self.submatrix_unchecked(&set))
    }

    fn submatrix_unchecked(&self, set: &[usize]) -> CMatrix {
        CMatrix::from_fn(set.len(), set.len(), |a, b| self.u[(set[a], set[b])])
    }

    fn gram_submatrix(&self, set: &[usize]) -> CMatrix {
        CMatrix::from_fn(set.len(), set.len(), |a, b| {
            self.beam_gram[(set[a], set[b])]
        })
    }

    /// ZF design plus rate evaluation for one set.
    pub fn evaluate_set(
        &self,
        set: &[usize],
        weights: &[f64],
    ) -> Result<SelectionResult, PrecoderError> {
        let set = normalize_set(set, self.num_users())?;
        let g = self.submatrix_unchecked(&set);
        let zf = zf_precoder(
            &g,
            &self.gram_submatrix(&set),
            self.power,
            self.max_condition,
        )?;
        Ok(evaluate_rates(self, &set, g, zf.normalized, weights))
    }

    /// `Q(M)`, or negative infinity for an infeasible set.
    pub fn weighted_sum_rate(&self, set: &[usize], weights: &[f64]) -> f64 {
        match self.evaluate_set(set, weights) {
            Ok(r) => r.q,
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

/// Sorts a user set and rejects duplicates and out-of-range indices.
pub fn normalize_set(set: &[usize], users: usize) -> Result<Vec<usize>, PrecoderError> {
    if set.is_empty() {
        return Err(PrecoderError::EmptySet);
    }
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            return Err(PrecoderError::DuplicateUser(w[0]));
        }
    }
    if let Some(&index) = sorted.last().filter(|&&i| i >= users) {
        return Err(PrecoderError::UserOutOfRange { index, users });
    }
    Ok(sorted)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZfPrecoder {
    /// `G^H (G G^H)^{-1}` before power normalisation.
    pub unnormalized: CMatrix,
    /// `F*_BB`, columns scaled to `P / M` composite power.
    pub normalized: CMatrix,
    /// `||F_RF f_BB,i||` of each unnormalised column.
    pub column_norms: Vec<f64>,
    /// One-norm condition number of `G`.
    pub condition: f64,
}

/// Zero-forcing precoder with equal power per stream.
///
/// `analog_gram` is `F*_RF(M)^H F*_RF(M)`, so that the composite column norm
/// `||F*_RF(M) f||^2 = f^H (F_RF^H F_RF) f`.
pub fn zf_precoder(
    g: &CMatrix,
    analog_gram: &CMatrix,
    power: f64,
    max_condition: f64,
) -> Result<ZfPrecoder, PrecoderError> {
    if !g.is_square() || g.rows() == 0 {
        return Err(PrecoderError::Dimension(format!(
            "G must be square and non-empty, got {}x{}",
            g.rows(),
            g.cols()
        )));
    }
    if analog_gram.rows() != g.rows() || !analog_gram.is_square() {
        return Err(PrecoderError::Dimension(
            "analog Gram matrix does not match G".into(),
        ));
    }
    let inv = g.inverse().ok_or(PrecoderError::SingularChannel {
        condition: f64::INFINITY,
    })?;
    let condition = g.norm_one() * inv.norm_one();
    if !(condition <= max_condition) {
        return Err(PrecoderError::SingularChannel { condition });
    }

    let m = g.rows();
    let per_stream = (power / m as f64).sqrt();
    let mut normalized = inv.clone();
    let mut column_norms = Vec::with_capacity(m);
    for c in 0..m {
        let col = inv.column(c);
        let mut quad = Complex64::new(0.0, 0.0);
        for (a, fa) in col.iter().enumerate() {
            for (b, fb) in col.iter().enumerate() {
                quad += fa.conj() * analog_gram[(a, b)] * fb;
            }
        }
        let norm = quad.re.max(0.0).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(PrecoderError::SingularChannel { condition });
        }
        normalized.scale_column(c, per_stream / norm);
        column_norms.push(norm);
    }
    Ok(ZfPrecoder {
        unnormalized: inv,
        normalized,
        column_norms,
        condition,
    })
}

/// Outcome of one scheduling decision.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Selected users, ascending.
    pub selected: Vec<usize>,
    /// `G(M)`; `None` when nothing is transmitted.
    pub gain_matrix: Option<CMatrix>,
    /// `F*_BB(M)`; `None` when nothing is transmitted.
    pub precoder: Option<CMatrix>,
    /// Per-user SINR over all `I` users (zero outside the set).
    pub sinr: Vec<f64>,
    /// Per-user rate in bit/s/Hz over all `I` users (zero outside the set).
    pub rates: Vec<f64>,
    /// Weighted sum-rate `Q(M)`.
    pub q: f64,
    /// False when the chosen set could not be zero-forced.
    pub feasible: bool,
}

impl SelectionResult {
    /// No transmission at all.
    pub fn empty(users: usize) -> Self {
        Self {
            selected: Vec::new(),
            gain_matrix: None,
            precoder: None,
            sinr: vec![0.0; users],
            rates: vec![0.0; users],
            q: 0.0,
            feasible: true,
        }
    }

    /// A chosen set that turned out singular: nobody is served this slot.
    pub fn infeasible(users: usize, set: Vec<usize>) -> Self {
        Self {
            selected: set,
            feasible: false,
            ..Self::empty(users)
        }
    }

    pub fn served(&self) -> usize {
        if self.feasible {
            self.selected.len()
        } else {
            0
        }
    }
}

/// Applies `F*_BB` and computes SINR, rates and `Q`.
///
/// `set` must already be sorted and unique, matching the row order of `g`.
pub fn evaluate_rates(
    ch: &EffectiveChannels,
    set: &[usize],
    g: CMatrix,
    f_star: CMatrix,
    weights: &[f64],
) -> SelectionResult {
    let n = ch.num_users();
    let received = &g * &f_star;
    let mut sinr = vec![0.0; n];
    let mut rates = vec![0.0; n];
    let mut q = 0.0;
    for (a, &user) in set.iter().enumerate() {
        let signal = received[(a, a)].norm_sqr();
        let interference: f64 = (0..set.len())
            .filter(|&b| b != a)
            .map(|b| received[(a, b)].norm_sqr())
            .sum();
        let s = signal / (interference + ch.noise[user]);
        sinr[user] = s;
        rates[user] = (1.0 + s).log2();
        q += weights[user] * rates[user];
    }
    SelectionResult {
        selected: set.to_vec(),
        gain_matrix: Some(g),
        precoder: Some(f_star),
        sinr,
        rates,
        q,
        feasible: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn orthonormal_beams(n: usize) -> Vec<Vec<Complex64>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) })
                    .collect()
            })
            .collect()
    }

    fn random_u(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    #[test]
    fn submatrix_follows_set_order() {
        let u = CMatrix::from_fn(6, 6, |i, j| c(i as f64, j as f64));
        let ch = EffectiveChannels::from_parts(u, &orthonormal_beams(6), vec![1.0; 6], 1.0, 1e12);
        let g = ch.effective_submatrix(&[2]).unwrap();
        assert_eq!(g.rows(), 1);
        assert_eq!(g[(0, 0)], c(2.0, 2.0));
        let g = ch.effective_submatrix(&[5, 2, 4]).unwrap();
        let order = [2, 4, 5];
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(g[(a, b)], c(order[a] as f64, order[b] as f64));
            }
        }
        let g = ch.effective_submatrix(&[1, 3]).unwrap();
        assert_eq!(g[(0, 1)], ch.u[(1, 3)]);
        assert_eq!(g[(1, 0)], ch.u[(3, 1)]);
    }

    #[test]
    fn bad_sets_are_rejected() {
        let ch = EffectiveChannels::from_parts(
            CMatrix::identity(3),
            &orthonormal_beams(3),
            vec![1.0; 3],
            1.0,
            1e12,
        );
        assert_eq!(
            ch.effective_submatrix(&[1, 1]),
            Err(PrecoderError::DuplicateUser(1))
        );
        assert_eq!(ch.effective_submatrix(&[]), Err(PrecoderError::EmptySet));
        assert!(matches!(
            ch.effective_submatrix(&[0, 3]),
            Err(PrecoderError::UserOutOfRange { index: 3, users: 3 })
        ));
    }

    #[test]
    fn scalar_zf() {
        let u = c(3e-6, -4e-6);
        let p = 2.0;
        let sigma2 = 1e-15;
        let beam = vec![vec![c(0.6, 0.0), c(0.0, 0.8)]];
        let ch = EffectiveChannels::from_parts(
            CMatrix::from_row_major(1, 1, vec![u]),
            &beam,
            vec![sigma2],
            p,
            1e12,
        );
        let r = ch.evaluate_set(&[0], &[1.0]).unwrap();
        let f = r.precoder.as_ref().unwrap()[(0, 0)];
        let expected = u.conj() * (p.sqrt() / u.norm());
        assert!((f - expected).norm() < 1e-12 * expected.norm());
        let rate = (1.0 + p * u.norm_sqr() / sigma2).log2();
        assert!((r.rates[0] - rate).abs() < 1e-12 * rate);
        assert!((r.sinr[0] - p * u.norm_sqr() / sigma2).abs() < 1e-9 * r.sinr[0]);
    }

    #[test]
    fn identity_channel_gives_scaled_identity() {
        let m = 4;
        let p = 2.0;
        let ch = EffectiveChannels::from_parts(
            CMatrix::identity(m),
            &orthonormal_beams(m),
            vec![1.0; m],
            p,
            1e12,
        );
        let r = ch.evaluate_set(&[0, 1, 2, 3], &[1.0; 4]).unwrap();
        let f = r.precoder.unwrap();
        let mut expected = CMatrix::identity(m);
        for col in 0..m {
            expected.scale_column(col, (p / m as f64).sqrt());
        }
        assert!(f.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn zf_inverts_g() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = random_u(&mut rng, 3);
        let zf = zf_precoder(&g, &CMatrix::identity(3), 1.0, 1e12).unwrap();
        assert!((&g * &zf.unnormalized).max_abs_diff(&CMatrix::identity(3)) < 1e-9);
    }

    #[test]
    fn power_is_split_equally() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 6;
        let u = random_u(&mut rng, n);
        let beams: Vec<Vec<Complex64>> = (0..n)
            .map(|_| {
                let v: Vec<Complex64> = (0..16)
                    .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                    .collect();
                let s = crate::linalg::norm_sqr(&v).sqrt();
                v.into_iter().map(|z| z / s).collect()
            })
            .collect();
        let p = 2.0;
        let ch = EffectiveChannels::from_parts(u, &beams, vec![1e-3; n], p, 1e12);
        let set = [0, 2, 3, 5];
        let r = ch.evaluate_set(&set, &[1.0; 6]).unwrap();
        let f = r.precoder.unwrap();
        let mut total = 0.0;
        for col in 0..set.len() {
            let mut x = vec![c(0.0, 0.0); 16];
            for (a, &user) in set.iter().enumerate() {
                for (xk, bk) in x.iter_mut().zip(&beams[user]) {
                    *xk += bk * f[(a, col)];
                }
            }
            let pw = crate::linalg::norm_sqr(&x);
            assert!((pw - p / 4.0).abs() < 1e-9 * p);
            total += pw;
        }
        assert!((total - p).abs() < 1e-9 * p);
    }

    #[test]
    fn singular_set_is_infeasible() {
        let u = CMatrix::from_row_major(
            2,
            2,
            vec![c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)],
        );
        let ch = EffectiveChannels::from_parts(u, &orthonormal_beams(2), vec![1.0; 2], 1.0, 1e12);
        assert!(matches!(
            ch.evaluate_set(&[0, 1], &[1.0, 1.0]),
            Err(PrecoderError::SingularChannel { .. })
        ));
        assert_eq!(
            ch.weighted_sum_rate(&[0, 1], &[1.0, 1.0]),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn ill_conditioned_set_is_infeasible() {
        let eps = 1e-14;
        let u = CMatrix::from_row_major(
            2,
            2,
            vec![c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0 + eps, 0.0)],
        );
        let ch = EffectiveChannels::from_parts(u, &orthonormal_beams(2), vec![1.0; 2], 1.0, 1e12);
        assert!(ch.evaluate_set(&[0, 1], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn single_user_has_no_interference_and_zero_weights_give_zero_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_u(&mut rng, 3);
        let ch = EffectiveChannels::from_parts(
            u.clone(),
            &orthonormal_beams(3),
            vec![0.1; 3],
            2.0,
            1e12,
        );
        let r = ch.evaluate_set(&[1], &[1.0; 3]).unwrap();
        let expected = 2.0 * u[(1, 1)].norm_sqr() / 0.1;
        assert!((r.sinr[1] - expected).abs() < 1e-12 * expected);
        assert_eq!(r.rates[0], 0.0);
        assert_eq!(r.rates[2], 0.0);
        let r = ch.evaluate_set(&[0, 1, 2], &[0.0; 3]).unwrap();
        assert_eq!(r.q, 0.0);
    }

    #[test]
    fn doubling_power_raises_every_sinr() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u = random_u(&mut rng, 4);
        let a = EffectiveChannels::from_parts(
            u.clone(),
            &orthonormal_beams(4),
            vec![0.1; 4],
            1.0,
            1e12,
        );
        let b = EffectiveChannels::from_parts(u, &orthonormal_beams(4), vec![0.1; 4], 2.0, 1e12);
        let ra = a.evaluate_set(&[0, 1, 2, 3], &[1.0; 4]).unwrap();
        let rb = b.evaluate_set(&[0, 1, 2, 3], &[1.0; 4]).unwrap();
        for i in 0..4 {
            assert!(rb.sinr[i] > ra.sinr[i]);
        }
    }
}
