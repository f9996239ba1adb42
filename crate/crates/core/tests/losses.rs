use proptest::prelude::*;
use rand::Rng;

use shrewd_core::data::beta_sample;
use shrewd_core::losses::{
    kl_loss_values, pair_weight, sim_loss_values, total_loss, LossInputs, LossWeights, SimLossConfig,
};
use shrewd_core::model::{
    encoder_backward, encoder_forward, gradient_check, ClassifierParams, EncoderParams,
    GradCheckConfig,
};
use shrewd_core::{Matrix, RngState};

const MARGIN: f64 = 1e-3;

fn uniform(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(0.02..0.98))
}

/// Semantic distances of a random labelling over a 3-level, 8-leaf tree.
fn label_distances(b: usize, rng: &mut RngState) -> (Matrix, Vec<usize>) {
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..8)).collect();
    let d = Matrix::from_fn(b, b, |i, j| {
        let (x, y) = (labels[i], labels[j]);
        if x == y {
            0.0
        } else if x / 2 == y / 2 {
            1.0 / 3.0
        } else if x / 4 == y / 4 {
            2.0 / 3.0
        } else {
            1.0
        }
    });
    (d, labels)
}

/// No coordinate differences or distance-matching residuals near zero.
fn sim_is_smooth(z: &Matrix, d: &Matrix) -> bool {
    let b = z.rows();
    let dz = shrewd_core::losses::manhattan_distances(z);
    let off = |m: &Matrix| {
        let s: f64 = (0..b).flat_map(|i| (0..b).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| m.get(i, j)).sum();
        s / (b * (b - 1)) as f64
    };
    let (tz, ty) = (off(&dz), off(d).max(1e-8));
    (0..b).all(|i| {
        (0..b).filter(|&j| j != i).all(|j| {
            (dz.get(i, j) / tz - d.get(i, j) / ty).abs() > MARGIN
                && z.row(i).iter().zip(z.row(j)).all(|(x, y)| (x - y).abs() > MARGIN)
        })
    })
}

fn gap_to_second(point: &[f64], set: &Matrix, skip: Option<usize>) -> f64 {
    let mut d: Vec<f64> = (0..set.rows())
        .filter(|&j| Some(j) != skip)
        .map(|j| point.iter().zip(set.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    d.sort_by(f64::total_cmp);
    if d.len() < 2 {
        f64::INFINITY
    } else {
        d[1] - d[0]
    }
}

/// Nearest neighbours are unambiguous for every row.
fn kl_is_smooth(z: &Matrix, target: &Matrix) -> bool {
    (0..z.rows()).all(|i| gap_to_second(z.row(i), target, None) > MARGIN && gap_to_second(z.row(i), z, Some(i)) > MARGIN)
}

fn check(report: shrewd_core::model::GradCheckReport) -> Result<(), TestCaseError> {
    prop_assert!(report.passed, "{report:?}");
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sim_gradient_matches_finite_differences(seed in any::<u64>(), b in 4usize..=8, k in 4usize..=16) {
        let mut rng = RngState::new(seed);
        let (z, d) = loop {
            let z = uniform(b, k, &mut rng);
            let (d, _) = label_distances(b, &mut rng);
            if sim_is_smooth(&z, &d) {
                break (z, d);
            }
        };
        let cfg = SimLossConfig::default();
        let f = |p: &[f64]| {
            let (v, g) = sim_loss_values(&Matrix::from_vec(b, k, p.to_vec()).unwrap(), &d, &cfg).unwrap();
            (v, g.into_vec())
        };
        check(gradient_check(f, z.as_slice(), &GradCheckConfig::default()).unwrap())?;
    }

    #[test]
    fn kl_gradient_matches_finite_differences(seed in any::<u64>(), b in 4usize..=8, k in 4usize..=16) {
        let mut rng = RngState::new(seed);
        let (z, target) = loop {
            let z = uniform(b, k, &mut rng);
            let t = beta_sample(0.1, 0.1, b, k, &mut rng).unwrap();
            if kl_is_smooth(&z, &t) {
                break (z, t);
            }
        };
        let f = |p: &[f64]| {
            let (v, g) = kl_loss_values(&Matrix::from_vec(b, k, p.to_vec()).unwrap(), &target).unwrap();
            (v, g.into_vec())
        };
        check(gradient_check(f, z.as_slice(), &GradCheckConfig::default()).unwrap())?;
    }

    #[test]
    fn sim_is_invariant_to_embedding_scale(seed in any::<u64>(), b in 2usize..10, k in 1usize..20, c in 0.01f64..100.0) {
        let mut rng = RngState::new(seed);
        let z = uniform(b, k, &mut rng);
        let (d, _) = label_distances(b, &mut rng);
        let scaled = Matrix::from_vec(b, k, z.as_slice().iter().map(|v| v * c).collect()).unwrap();
        let cfg = SimLossConfig::default();
        let (a, _) = sim_loss_values(&z, &d, &cfg).unwrap();
        let (s, _) = sim_loss_values(&scaled, &d, &cfg).unwrap();
        prop_assert!((a - s).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {s}");
    }

    #[test]
    fn pair_weight_decreases_from_one(d1 in 0.0f64..1.0, d2 in 0.0f64..1.0) {
        let cfg = SimLossConfig::default();
        prop_assert_eq!(pair_weight(0.0, &cfg), 1.0);
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(pair_weight(lo, &cfg) >= pair_weight(hi, &cfg));
        prop_assert!(pair_weight(hi, &cfg) > 0.0);
    }

    #[test]
    fn losses_are_finite_on_duplicates(seed in any::<u64>(), b in 2usize..8, k in 1usize..8) {
        let mut rng = RngState::new(seed);
        let row: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..0.99)).collect();
        let z = Matrix::from_fn(b, k, |_, j| row[j]);
        let (d, _) = label_distances(b, &mut rng);
        let (s, gs) = sim_loss_values(&z, &d, &SimLossConfig::default()).unwrap();
        let (kl, gk) = kl_loss_values(&z, &z).unwrap();
        prop_assert!(s.is_finite() && gs.is_finite() && kl.is_finite() && gk.is_finite());
    }
}

#[test]
fn kl_favours_the_target_distribution() {
    // A bimodal sample scores lower against a Beta(0.1, 0.1) target than a
    // sample bunched around 0.5.
    let (b, k) = (128, 8);
    let mut wins = 0;
    for seed in 0..20 {
        let mut rng = RngState::new(seed);
        let target = beta_sample(0.1, 0.1, b, k, &mut rng).unwrap();
        let same = beta_sample(0.1, 0.1, b, k, &mut rng).unwrap();
        let bunched = beta_sample(20.0, 20.0, b, k, &mut rng).unwrap();
        let (a, _) = kl_loss_values(&same, &target).unwrap();
        let (c, _) = kl_loss_values(&bunched, &target).unwrap();
        wins += usize::from(c > a);
    }
    assert_eq!(wins, 20);
}

/// Total loss through encoder and classifier as one flat parameter vector.
#[test]
fn composed_gradient_matches_finite_differences() {
    let mut checked = 0;
    for seed in 0..40u64 {
        if checked == 6 {
            break;
        }
        let mut rng = RngState::new(seed);
        let (b, dim, k, classes) = (6, 5, 6, 8);
        let x = Matrix::from_fn(b, dim, |_, _| rng.random_range(-1.0..1.0));
        let enc = EncoderParams::init(&[dim, 7, k], &mut rng).unwrap();
        let cls = ClassifierParams::init(classes, k, &mut rng);
        let (d, labels) = label_distances(b, &mut rng);
        let target = beta_sample(0.1, 0.1, b, k, &mut rng).unwrap();

        // Skip instances near a ReLU, absolute-value or nearest-neighbour kink.
        let hidden = &enc.layers()[0];
        let relu_ok = (0..b).all(|i| {
            (0..hidden.outputs()).all(|o| {
                let a: f64 = hidden.biases[o] + (0..dim).map(|c| hidden.weights.get(o, c) * x.get(i, c)).sum::<f64>();
                a.abs() > MARGIN
            })
        });
        let (z, _) = encoder_forward(&enc, &x).unwrap();
        if !(relu_ok && sim_is_smooth(z.values(), &d) && kl_is_smooth(z.values(), &target)) {
            continue;
        }

        let n_enc = enc.num_params();
        let weights = LossWeights { sim: 1.0, kl: 0.5, cls: 0.7 };
        let f = |p: &[f64]| {
            let mut e = enc.clone();
            e.set_flat(&p[..n_enc]).unwrap();
            let mut c = cls.clone();
            c.set_flat(&p[n_enc..]).unwrap();
            let (z, cache) = encoder_forward(&e, &x).unwrap();
            let inputs = LossInputs {
                z: &z,
                distances: &d,
                labels: &labels,
                classifier: &c,
                target: &target,
            };
            let loss = total_loss(&inputs, &weights, &SimLossConfig::default()).unwrap();
            let mut g = encoder_backward(&e, &cache, &loss.grad_z).unwrap().to_flat();
            g.extend(loss.grad_classifier.to_flat());
            (loss.total, g)
        };
        let mut flat = enc.to_flat();
        flat.extend(cls.to_flat());
        let report = gradient_check(f, &flat, &GradCheckConfig::default()).unwrap();
        assert!(report.passed, "seed {seed}: {report:?}");
        assert_eq!(report.coords_checked, flat.len());
        checked += 1;
    }
    assert_eq!(checked, 6, "too few kink-free instances");
}
