use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wsmimo::analysis::{ambiguity, crlb, AfGrid, AfPlane};
use wsmimo::completion::{coherence, relative_error, shrink_exact, svt_complete, SvtParams};
use wsmimo::estimation::{Axis, GridSpec};
use wsmimo::geometry::{delay, doppler_shift, make_geometry, RangeBounds};
use wsmimo::harness::{sweep, Experiment, ExperimentConfig};
use wsmimo::scene::{doppler_steering, synthesize_clean, PulseDataMatrix, SampleMask};
use wsmimo::waveform::{autocorrelation_at, hadamard_codes};
use wsmimo::{AntennaGeometry, Layout, PhaseCodeSet, RadarConfig, Region, SceneModel, Target, Vec2, WindowPolicy};

fn region() -> Region {
    Region::new(1000.0, 1200.0, 1000.0, 1200.0).unwrap()
}

fn circular() -> AntennaGeometry {
    make_geometry(&Layout::fig3_circular(), region(), 0).unwrap()
}

fn in_region() -> impl Strategy<Value = Vec2> {
    (1000.0..1200.0f64, 1000.0..1200.0f64).prop_map(|(x, y)| Vec2::new(x, y))
}

fn velocity() -> impl Strategy<Value = Vec2> {
    (-30.0..30.0f64, -30.0..30.0f64).prop_map(|(x, y)| Vec2::new(x, y))
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat<Complex64> {
    Mat::from_fn(rows, cols, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

/// Small but complete experiment: 2×4 circular arrays, 1 m grid around the target.
fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_toml(
        r#"
trials = 4
[geometry.layout]
kind = "circular"
n_tx = 2
n_rx = 4
tx_radius = 5000.0
rx_radius = 3000.0
[estimation]
position_grid = { x = [1090.0, 1110.0], y = [1090.0, 1110.0], step = 1.0 }
velocity_grid = { x = [8.0, 12.0], y = [8.0, 12.0], step = 0.5 }
[sweep]
snr_db = [10.0, 20.0]
sampling_rate = [0.5, 1.0]
"#,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn translation_leaves_delay_doppler_and_offset_unchanged(
        p in in_region(), v in velocity(), sx in -1e4..1e4f64, sy in -1e4..1e4f64,
    ) {
        let g = circular();
        let by = Vec2::new(sx, sy);
        let moved = g.translate(by);
        let t = Target::new(p, v);
        let tm = Target::new(p + by, v);
        for pair in g.pairs() {
            let (a, b) = g.antennas(pair);
            let (am, bm) = moved.antennas(pair);
            prop_assert!(close(delay(a, b, p).unwrap(), delay(am, bm, p + by).unwrap(), 1e-11));
            let f = doppler_shift(a, b, &t, 5e9).unwrap();
            let fm = doppler_shift(am, bm, &tm, 5e9).unwrap();
            prop_assert!((f - fm).abs() <= 1e-9 * f.abs().max(1.0));
            let rb = RangeBounds::over(g.region(), a, b, 1e-7).unwrap();
            let rbm = RangeBounds::over(moved.region(), am, bm, 1e-7).unwrap();
            let x = (g.bistatic_range(pair, p) - rb.r_min) / rb.cell;
            prop_assume!((x - x.round()).abs() > 1e-6);
            prop_assert_eq!(rb.l_max, rbm.l_max);
            prop_assert_eq!(rb.offset(g.bistatic_range(pair, p)), rbm.offset(moved.bistatic_range(pair, p + by)));
        }
    }

    #[test]
    fn rotation_leaves_delay_and_doppler_unchanged(p in in_region(), v in velocity(), angle in 0.0..(2.0 * PI)) {
        let g = circular();
        let t = Target::new(p, v);
        let tr = Target::new(p.rotate(angle), v.rotate(angle));
        for pair in g.pairs() {
            let (a, b) = g.antennas(pair);
            let (ar, br) = (a.rotate(angle), b.rotate(angle));
            prop_assert!(close(delay(a, b, p).unwrap(), delay(ar, br, tr.position).unwrap(), 1e-11));
            let f = doppler_shift(a, b, &t, 5e9).unwrap();
            let fr = doppler_shift(ar, br, &tr, 5e9).unwrap();
            prop_assert!((f - fr).abs() <= 1e-8 * f.abs().max(1.0));
        }
    }

    #[test]
    fn offset_is_monotone_and_inside_window(p in in_region(), q in in_region()) {
        let g = circular();
        for pair in g.pairs() {
            let (a, b) = g.antennas(pair);
            let rb = RangeBounds::over(g.region(), a, b, 1e-7).unwrap();
            let (rp, rq) = (g.bistatic_range(pair, p), g.bistatic_range(pair, q));
            let (lp, lq) = (rb.offset(rp).unwrap(), rb.offset(rq).unwrap());
            prop_assert!(lp <= rb.l_max && lq <= rb.l_max);
            if rp <= rq {
                prop_assert!(lp <= lq);
            } else {
                prop_assert!(lp >= lq);
            }
        }
    }

    #[test]
    fn autocorrelation_is_bounded_and_hermitian(phases in prop::collection::vec(0.0..(2.0 * PI), 1..80)) {
        let code: Vec<Complex64> = phases.iter().map(|&t| Complex64::cis(t)).collect();
        let n = code.len() as i64;
        for lag in 0..n {
            let g = autocorrelation_at(&code, lag);
            prop_assert!(g.norm() <= (n - lag) as f64 + 1e-9);
            prop_assert!((autocorrelation_at(&code, -lag) - g.conj()).norm() <= 1e-9);
        }
        prop_assert_eq!(autocorrelation_at(&code, n), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn mask_projection_is_idempotent(rows in 1usize..20, cols in 1usize..20, rate in 0.05..1.0f64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = SampleMask::random(rows, cols, rate, &mut rng).unwrap();
        let mut once = random_matrix(rows, cols, &mut rng);
        mask.apply(&mut once);
        let mut twice = once.clone();
        mask.apply(&mut twice);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn shrinkage_lowers_every_singular_value_by_the_threshold(
        rows in 2usize..24, cols in 2usize..24, frac in 0.0..1.2f64, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(rows, cols, &mut rng);
        let s = m.singular_values().unwrap();
        let tau = frac * s[0];
        let out = shrink_exact(m.as_ref(), tau).unwrap();
        let want: Vec<f64> = s.iter().map(|v| v - tau).filter(|&v| v > 0.0).collect();
        prop_assert_eq!(out.rank, want.len());
        let got = out.matrix.singular_values().unwrap();
        for (i, w) in want.iter().enumerate() {
            prop_assert!((got[i] - w).abs() <= 1e-10 * s[0]);
            prop_assert!((out.singular_values[i] - s[i]).abs() <= 1e-10 * s[0]);
        }
        prop_assert!((out.nuclear_norm - want.iter().sum::<f64>()).abs() <= 1e-10 * s[0] * s.len() as f64);
        for g in &got[want.len()..] {
            prop_assert!(*g <= 1e-10 * s[0]);
        }
    }

    #[test]
    fn coherence_stays_in_its_range(rows in 2usize..30, cols in 2usize..30, k in 1usize..4, seed in any::<u64>()) {
        let k = k.min(rows).min(cols);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(rows, k, &mut rng) * random_matrix(k, cols, &mut rng);
        let c = coherence(m.as_ref(), 1e-10).unwrap();
        prop_assert_eq!(c.rank, k);
        let slack = 1e-12;
        prop_assert!(c.mu_u >= 1.0 - slack && c.mu_u <= rows as f64 / k as f64 * (1.0 + slack));
        prop_assert!(c.mu_v >= 1.0 - slack && c.mu_v <= cols as f64 / k as f64 * (1.0 + slack));
    }

    #[test]
    fn single_echo_energy_bookkeeping(
        p in in_region(), v in velocity(), energy in 0.1..10.0f64, re in -2.0..2.0f64, im in -2.0..2.0f64,
    ) {
        prop_assume!(re.hypot(im) > 1e-3);
        let cfg = RadarConfig { energy, ..RadarConfig::default() };
        let beta = Complex64::new(re, im);
        let sc = SceneModel::new(circular(), vec![Target::new(p, v)], cfg, WindowPolicy::Shared)
            .unwrap()
            .with_reflectivity(vec![beta; 30])
            .unwrap();
        let codes = hadamard_codes(3, 64, 1e-7).unwrap();
        let z = synthesize_clean(&sc, (1, 4), &codes).unwrap();
        let want = energy * beta.norm_sqr() * 64.0 * 128.0;
        prop_assert!(close(z.values().squared_norm_l2(), want, 1e-12));
    }

    #[test]
    fn crlb_swaps_axes_under_a_quarter_turn(p in in_region(), snr in 0.1..1e3f64) {
        let g = circular();
        let rot = |v: Vec2| v.rotate(PI / 2.0);
        let turned = AntennaGeometry::new(
            g.tx().iter().map(|&v| rot(v)).collect(),
            g.rx().iter().map(|&v| rot(v)).collect(),
            Region::new(-1200.0, -1000.0, 1000.0, 1200.0).unwrap(),
        )
        .unwrap();
        let a = crlb(&g, p, snr, 5e9, 3e6).unwrap();
        let b = crlb(&turned, rot(p), snr, 5e9, 3e6).unwrap();
        prop_assert!(close(a.e_x, b.e_y, 1e-9));
        prop_assert!(close(a.e_y, b.e_x, 1e-9));
        prop_assert!(close(a.sigma2_x, b.sigma2_y, 1e-9));
        prop_assert!(a.sigma2_x > 0.0 && a.sigma2_y > 0.0);
        let c = crlb(&g, p, 10.0 * snr, 5e9, 3e6).unwrap();
        prop_assert!(close(c.sigma2_x * 10.0, a.sigma2_x, 1e-13));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ml_argmax_survives_common_rescaling(trial in 0u64..1000, scale in 1e-3..1e3f64) {
        let exp = Experiment::new(&small_config()).unwrap();
        let observed = exp.observe(10.0, 0.5, trial).unwrap();
        let scaled: Vec<PulseDataMatrix> = observed
            .iter()
            .map(|m| {
                let values = Mat::from_fn(m.shape().0, m.shape().1, |i, j| m.values()[(i, j)] * scale);
                PulseDataMatrix::partial(m.pair(), values, m.mask().unwrap().clone())
                    .unwrap()
                    .with_noise_variance(m.noise_variance() * scale * scale)
            })
            .collect();
        let a = exp.ml_surface(&observed).unwrap();
        let b = exp.ml_surface(&scaled).unwrap();
        prop_assert_eq!(a.argmax(), b.argmax());
    }

    #[test]
    fn ambiguity_ignores_a_common_code_phase(phase in 0.0..(2.0 * PI), rate in prop::sample::select(vec![0.3, 1.0])) {
        let exp = Experiment::new(&small_config()).unwrap();
        let turned: Vec<Vec<Complex64>> = exp
            .codes()
            .codes()
            .iter()
            .map(|c| c.iter().map(|s| s * Complex64::cis(phase)).collect())
            .collect();
        let turned = PhaseCodeSet::new(turned, 1e-7).unwrap();
        let axis = Axis::span(1090.0, 1110.0, 2.0).unwrap();
        let grid = AfGrid { plane: AfPlane::Position, x: axis, y: axis };
        let reference = exp.scene().targets()[0];
        let a = ambiguity(&reference, &grid, exp.sensor(), exp.codes(), rate, 7).unwrap();
        let b = ambiguity(&reference, &grid, exp.sensor(), &turned, rate, 7).unwrap();
        for (x, y) in a.grid.values.iter().zip(&b.grid.values) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn rank_one_recovery_at_sixty_percent() {
    let (q, n, cols) = (64usize, 64usize, 128usize);
    let code = hadamard_codes(1, n, 1e-7).unwrap().code(0).to_vec();
    let mut hits = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let offset = rng.gen_range(0..=cols - n);
        let beta = Complex64::from_polar(rng.gen_range(0.5..2.0), rng.gen_range(0.0..2.0 * PI));
        let steering = doppler_steering(rng.gen_range(-500.0..500.0), q, 25e-3);
        let z = Mat::from_fn(q, cols, |i, j| {
            if (offset..offset + n).contains(&j) {
                beta * steering[i] * code[j - offset]
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let mask = SampleMask::random(q, cols, 0.6, &mut rng).unwrap();
        let x = PulseDataMatrix::partial((0, 0), z.clone(), mask).unwrap();
        let params = SvtParams { tol: 1e-6, ..SvtParams::for_matrix(&x) };
        let out = svt_complete(&x, &params).unwrap();
        if relative_error(&z, &out.matrix).unwrap() < 1e-4 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn noise_free_residual_settles_monotonically() {
    let exp = Experiment::new(&small_config()).unwrap();
    let observed = exp.observe(f64::INFINITY, 0.5, 3).unwrap();
    for x in &observed {
        let params = SvtParams { trace: true, ..SvtParams::for_matrix(x) };
        let out = svt_complete(x, &params).unwrap();
        assert!(out.converged);
        let tail: Vec<f64> = out.trace.iter().rev().take(10).map(|r| r.residual).collect();
        for w in tail.windows(2) {
            assert!(w[0] <= w[1], "residual rose near the end: {tail:?}");
        }
    }
}

#[test]
fn sweep_does_not_depend_on_thread_count() {
    let cfg = small_config();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| serde_json::to_string(&sweep(&cfg).unwrap()).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn localization_error_does_not_grow_with_snr() {
    let mut cfg = small_config();
    cfg.estimation.geometric = false;
    cfg.estimation.velocity = false;
    cfg.estimation.subsampled = false;
    cfg.estimation.crlb = false;
    cfg.estimation.position_grid = Some(GridSpec { x: [1070.0, 1130.0], y: [1070.0, 1130.0], step: 1.0 });
    let exp = Experiment::new(&cfg).unwrap();
    let mse = |snr| {
        (0..200)
            .map(|t| {
                let r = exp.run(snr, 1.0, t).unwrap();
                let p = r.position_hat.unwrap();
                p.distance(Vec2::new(1100.0, 1100.0)).powi(2)
            })
            .sum::<f64>()
            / 200.0
    };
    let (high, low) = (mse(-20.0), mse(-35.0));
    assert!(high <= 1.05 * low, "MSE {high} at -20 dB vs {low} at -35 dB");
}
