//! Zero-forcing checked against an independent pseudo-inverse and a direct
//! evaluation on the full antenna-domain channels.

use hbsel_core::channel::generate_episode;
use hbsel_core::codebook::Codebook;
use hbsel_core::linalg::{inner, CMatrix};
use hbsel_core::precoder::{zf_precoder, EffectiveChannels, DEFAULT_MAX_CONDITION};
use hbsel_core::SystemConfig;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    h: Vec<Vec<Complex64>>,
    beams: Vec<Vec<Complex64>>,
    set: Vec<usize>,
    weights: Vec<f64>,
    noise: f64,
    power: f64,
}

fn simulated_instance(rng: &mut ChaCha8Rng, cb: &Codebook, cfg: &SystemConfig) -> Instance {
    let state = generate_episode(rng.random(), cfg).unwrap();
    let assignment = cb.sweep_assignments(&state);
    let size = rng.random_range(1..=6);
    let mut set: Vec<usize> = sample(rng, cfg.num_users, size).into_vec();
    set.sort_unstable();
    Instance {
        h: state.channels().iter().map(|h| h.to_vec()).collect(),
        beams: assignment.vectors,
        set,
        weights: (0..cfg.num_users)
            .map(|_| rng.random_range(0.1..5.0))
            .collect(),
        noise: cfg.noise_w,
        power: cfg.power_w,
    }
}

fn gaussian_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (n, ant) = (8, 16);
    let mut cplx =
        |s: f64| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * s;
    let h = (0..n)
        .map(|_| (0..ant).map(|_| cplx(1e-4)).collect())
        .collect();
    let beams = (0..n)
        .map(|_| {
            let v: Vec<Complex64> = (0..ant).map(|_| cplx(1.0)).collect();
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.into_iter().map(|z| z / norm).collect()
        })
        .collect();
    let size = rng.random_range(1..=6);
    let mut set: Vec<usize> = sample(rng, n, size).into_vec();
    set.sort_unstable();
    Instance {
        h,
        beams,
        set,
        weights: (0..n).map(|_| rng.random_range(0.1..5.0)).collect(),
        noise: 1e-12,
        power: 2.0,
    }
}

fn to_na(m: &CMatrix) -> DMatrix<Complex64> {
    DMatrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)])
}

#[test]
fn zf_matches_pseudo_inverse_and_direct_evaluation() {
    let mut cfg = SystemConfig::default();
    cfg.num_users = 8;
    let cb = Codebook::from_config(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 1000 {
        attempts += 1;
        assert!(attempts < 20_000, "too few feasible instances");
        let inst = if checked % 2 == 0 {
            simulated_instance(&mut rng, &cb, &cfg)
        } else {
            gaussian_instance(&mut rng)
        };
        let n = inst.h.len();
        let u = CMatrix::from_fn(n, n, |i, j| inner(&inst.h[i], &inst.beams[j]));
        let ch = EffectiveChannels::from_parts(
            u,
            &inst.beams,
            vec![inst.noise; n],
            inst.power,
            DEFAULT_MAX_CONDITION,
        );
        let Ok(result) = ch.evaluate_set(&inst.set, &inst.weights) else {
            continue;
        };
        checked += 1;
        let m = inst.set.len();
        let p = inst.power;

        // Oracle precoder: pseudo-inverse, then unit composite norm per column.
        let g = ch.effective_submatrix(&inst.set).unwrap();
        let pinv = to_na(&g).pseudo_inverse(1e-300).unwrap();
        let f_rf = DMatrix::from_fn(inst.h[0].len(), m, |a, c| inst.beams[inst.set[c]][a]);
        let mut f_bb = pinv.clone();
        for c in 0..m {
            let composite = &f_rf * f_bb.column(c);
            let norm = composite.norm();
            f_bb.column_mut(c).scale_mut((p / m as f64).sqrt() / norm);
        }

        let ours = to_na(result.precoder.as_ref().unwrap());
        let scale = f_bb.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let diff = (&ours - &f_bb).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let cond = zf_precoder(&g, &CMatrix::identity(m), p, f64::INFINITY)
            .unwrap()
            .condition;
        assert!(
            diff <= 1e-10 * scale * cond.max(1.0),
            "precoder mismatch {diff} vs scale {scale}, cond {cond}"
        );

        // Direct antenna-domain evaluation with our precoder.
        let x = &f_rf * &ours;
        let total_power: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        assert!((total_power - p).abs() <= 1e-9 * p, "power {total_power}");
        for (a, &i) in inst.set.iter().enumerate() {
            let hi = DMatrix::from_fn(1, inst.h[i].len(), |_, k| inst.h[i][k].conj());
            let y = &hi * &x;
            let mut interference = 0.0;
            for b in 0..m {
                if b != a {
                    let cross = y[(0, b)].norm_sqr();
                    assert!(cross <= 1e-18 * p, "cross term {cross}");
                    interference += cross;
                }
            }
            let sinr = y[(0, a)].norm_sqr() / (interference + inst.noise);
            assert!(
                (sinr - result.sinr[i]).abs() <= 1e-9 * sinr,
                "sinr {sinr} vs {}",
                result.sinr[i]
            );
            let rate = (1.0 + sinr).log2();
            assert!((rate - result.rates[i]).abs() <= 1e-9 * rate.max(1.0));
        }
        let q: f64 = inst
            .set
            .iter()
            .map(|&i| inst.weights[i] * (1.0 + result.sinr[i]).log2())
            .sum();
        assert!((q - result.q).abs() <= 1e-12 * q.max(1.0));
        for i in (0..n).filter(|i| !inst.set.contains(i)) {
            assert_eq!(result.rates[i], 0.0);
        }
    }
}

#[test]
fn scalar_precoder_has_full_power_and_unit_phase() {
    let u = Complex64::new(3e-6, -4e-6);
    let beam = vec![vec![Complex64::new(1.0, 0.0)]];
    let ch = EffectiveChannels::from_parts(
        CMatrix::from_row_major(1, 1, vec![u]),
        &beam,
        vec![1e-15],
        2.0,
        1e12,
    );
    let r = ch.evaluate_set(&[0], &[1.0]).unwrap();
    let f = r.precoder.unwrap()[(0, 0)];
    // f = sqrt(P) conj(u) / |u|
    let expected = 2f64.sqrt() * u.conj() / u.norm();
    assert!((f - expected).norm() < 1e-12);
    let sinr = 2.0 * u.norm_sqr() / 1e-15;
    assert!((r.sinr[0] - sinr).abs() < 1e-9 * sinr);
}
