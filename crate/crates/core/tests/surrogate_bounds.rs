//! The surrogate objective upper-bounds the expected loss of every
//! feasible adversary, and on a tiny instance it agrees with an exhaustive
//! grid over the adversary's choices.

use drlearn::conditionals::{ConditionalEnsemble, LogisticModel};
use drlearn::dataset::UnlabeledSet;
use drlearn::numeric::{cross_entropy, Matrix, ProbVector};
use drlearn::trainer::{surrogate_value, AmbiguityConfig, LinearClassifier, SurrogateConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// d = 2, C = 2, K = 2, four target points; weights kept small so the
/// landscape is gentle enough for a 1e-2 grid to resolve.
fn tiny_instance() -> (LinearClassifier, ConditionalEnsemble, UnlabeledSet) {
    let theta = LinearClassifier {
        weights: Matrix::new(2, 2, vec![0.35, -0.15, -0.25, 0.3]).unwrap(),
        bias: vec![0.05, -0.05],
    };
    let model_a = LogisticModel {
        weights: Matrix::new(2, 2, vec![0.4, 0.1, -0.4, -0.1]).unwrap(),
        bias: vec![0.0, 0.0],
        lambda: 0.0,
        degenerate: false,
    };
    let model_b = LogisticModel {
        weights: Matrix::new(2, 2, vec![-0.2, 0.3, 0.2, -0.3]).unwrap(),
        bias: vec![0.1, -0.1],
        lambda: 0.0,
        degenerate: false,
    };
    let ensemble = ConditionalEnsemble::new(vec![model_a, model_b]).unwrap();
    let target = UnlabeledSet::new(
        Matrix::new(4, 2, vec![0.8, -0.4, -0.6, 0.9, 0.2, 0.3, -1.0, -0.7]).unwrap(),
    )
    .unwrap();
    (theta, ensemble, target)
}

fn mixture_label(
    ensemble: &ConditionalEnsemble,
    beta: &[f64],
    z: &[f64],
) -> ProbVector {
    let mut out = vec![0.0; ensemble.class_count];
    for (k, model) in ensemble.models.iter().enumerate() {
        let p = model.predict_proba(z).unwrap();
        for (o, pi) in out.iter_mut().zip(p.as_slice()) {
            *o += beta[k] * pi;
        }
    }
    ProbVector::new(out).unwrap()
}

#[test]
fn zero_radii_make_surrogate_the_plain_mean_loss() {
    let (theta, ensemble, target) = tiny_instance();
    let amb = AmbiguityConfig::uniform(0.0, 0.0, 2).unwrap();
    let out = surrogate_value(&theta, &ensemble, &target, &amb, &SurrogateConfig::default())
        .unwrap();
    assert!(out.converged);
    let beta_bar = [0.5, 0.5];
    let mut expect = 0.0;
    for i in 0..target.len() {
        let z = target.features.row(i);
        let y = mixture_label(&ensemble, &beta_bar, z);
        expect += cross_entropy(&theta.predict_proba(z).unwrap(), &y).unwrap();
    }
    expect /= target.len() as f64;
    assert!((out.value - expect).abs() < 1e-12);
}

#[test]
fn surrogate_is_monotone_in_the_covariate_radius() {
    let (theta, ensemble, target) = tiny_instance();
    let cfg = SurrogateConfig::default();
    let small = surrogate_value(
        &theta,
        &ensemble,
        &target,
        &AmbiguityConfig::uniform(0.2, 0.3, 2).unwrap(),
        &cfg,
    )
    .unwrap();
    let large = surrogate_value(
        &theta,
        &ensemble,
        &target,
        &AmbiguityConfig::uniform(0.4, 0.3, 2).unwrap(),
        &cfg,
    )
    .unwrap();
    assert!(large.value >= small.value - 1e-6);
}

#[test]
fn surrogate_dominates_sampled_adversaries_and_matches_grid() {
    let (theta, ensemble, target) = tiny_instance();
    let eps1 = 0.3;
    let eps2 = 0.3;
    let amb = AmbiguityConfig::uniform(eps1, eps2, 2).unwrap();
    let out = surrogate_value(&theta, &ensemble, &target, &amb, &SurrogateConfig::default())
        .unwrap();
    assert!(out.converged);

    // Feasibility of the reported adversary.
    for (i, z) in out.z_prime.iter().enumerate() {
        let d: f64 = z
            .iter()
            .zip(target.features.row(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(d <= eps1 + 1e-8);
    }

    // Monte-Carlo: 1000 feasible adversaries, none may beat the surrogate.
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let b_lo = (0.5 - eps2 / 2f64.sqrt()).max(0.0);
    let b_hi = (0.5 + eps2 / 2f64.sqrt()).min(1.0);
    for _ in 0..1000 {
        let b = rng.random_range(b_lo..b_hi);
        let beta = [b, 1.0 - b];
        let mut value = 0.0;
        for i in 0..target.len() {
            let z_tg = target.features.row(i);
            // Uniform point of the ε₁ disk.
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let radius = eps1 * rng.random::<f64>().sqrt();
            let z = [
                z_tg[0] + radius * angle.cos(),
                z_tg[1] + radius * angle.sin(),
            ];
            let y = mixture_label(&ensemble, &beta, z_tg);
            value += cross_entropy(&theta.predict_proba(&z).unwrap(), &y).unwrap();
        }
        value /= target.len() as f64;
        assert!(
            value <= out.value + 1e-9,
            "sampled adversary {value} beats surrogate {}",
            out.value
        );
    }

    // Exhaustive grid over (β, z′): interior lattice of each disk at step
    // 1e-2 plus its boundary circle, β at step 1e-2 with exact endpoints.
    let step = 0.01;
    let mut grid_offsets: Vec<[f64; 2]> = Vec::new();
    let n_axis = (2.0 * eps1 / step).ceil() as i64;
    for i in 0..=n_axis {
        for j in 0..=n_axis {
            let dx = -eps1 + i as f64 * step;
            let dy = -eps1 + j as f64 * step;
            if (dx * dx + dy * dy).sqrt() <= eps1 {
                grid_offsets.push([dx, dy]);
            }
        }
    }
    let arcs = ((std::f64::consts::TAU * eps1 / step).ceil() as usize).max(8);
    for a in 0..arcs {
        let t = std::f64::consts::TAU * a as f64 / arcs as f64;
        grid_offsets.push([eps1 * t.cos(), eps1 * t.sin()]);
    }

    // Per sample: −log prediction at every grid point (β-independent).
    let neglog: Vec<Vec<[f64; 2]>> = (0..target.len())
        .map(|i| {
            let z_tg = target.features.row(i);
            grid_offsets
                .iter()
                .map(|off| {
                    let z = [z_tg[0] + off[0], z_tg[1] + off[1]];
                    let p = theta.predict_proba(&z).unwrap();
                    [
                        -(p[0].clamp(1e-12, 1.0).ln()),
                        -(p[1].clamp(1e-12, 1.0).ln()),
                    ]
                })
                .collect()
        })
        .collect();
    let conds: Vec<Vec<ProbVector>> = (0..target.len())
        .map(|i| {
            ensemble
                .models
                .iter()
                .map(|m| m.predict_proba(target.features.row(i)).unwrap())
                .collect()
        })
        .collect();

    let mut beta_grid: Vec<f64> = Vec::new();
    let mut b = b_lo;
    while b < b_hi {
        beta_grid.push(b);
        b += step;
    }
    beta_grid.push(b_hi);

    let mut grid_best = f64::NEG_INFINITY;
    for &b in &beta_grid {
        let mut value = 0.0;
        for i in 0..target.len() {
            let y0 = b * conds[i][0][0] + (1.0 - b) * conds[i][1][0];
            let y1 = b * conds[i][0][1] + (1.0 - b) * conds[i][1][1];
            let mut inner = f64::NEG_INFINITY;
            for nl in &neglog[i] {
                inner = inner.max(y0 * nl[0] + y1 * nl[1]);
            }
            value += inner;
        }
        value /= target.len() as f64;
        grid_best = grid_best.max(value);
    }
    assert!(
        (out.value - grid_best).abs() <= 1e-3,
        "surrogate {} vs grid oracle {grid_best}",
        out.value
    );
}
