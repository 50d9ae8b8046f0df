//! Grid-search oracles for the projection operators: every projection must
//! be feasible, idempotent, and at least as close to the query point as
//! every candidate the oracle enumerates.

use drlearn::numeric::{
    project_ball, project_simplex, project_simplex_ball, ProbVector, BALL_FEASIBILITY_TOL,
    PROB_SUM_TOL,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Candidate points covering a 2D ball: a rectangular interior grid plus a
/// dense boundary circle.
fn ball_grid_2d(center: &[f64], radius: f64, step: f64) -> Vec<Vec<f64>> {
    let mut points = Vec::new();
    let n = (2.0 * radius / step).ceil() as i64;
    for i in 0..=n {
        for j in 0..=n {
            let x = center[0] - radius + i as f64 * step;
            let y = center[1] - radius + j as f64 * step;
            let p = vec![x, y];
            if dist(&p, center) <= radius {
                points.push(p);
            }
        }
    }
    let arcs = ((2.0 * std::f64::consts::PI * radius / step).ceil() as usize).max(8);
    for a in 0..arcs {
        let t = 2.0 * std::f64::consts::PI * a as f64 / arcs as f64;
        points.push(vec![
            center[0] + radius * t.cos(),
            center[1] + radius * t.sin(),
        ]);
    }
    points
}

/// Points of the 3-class simplex on a triangular grid of the given step.
fn simplex_grid_3d(step: f64) -> Vec<Vec<f64>> {
    let n = (1.0 / step).round() as i64;
    let mut points = Vec::new();
    for i in 0..=n {
        for j in 0..=(n - i) {
            let a = i as f64 / n as f64;
            let b = j as f64 / n as f64;
            points.push(vec![a, b, 1.0 - a - b]);
        }
    }
    points
}

#[test]
fn project_ball_beats_grid_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..120 {
        let center = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let radius = rng.random_range(0.1..1.5);
        let point = vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let out = project_ball(&point, &center, radius).unwrap();
        assert!(dist(&out, &center) <= radius + BALL_FEASIBILITY_TOL);
        // Idempotence.
        let again = project_ball(&out, &center, radius).unwrap();
        assert!(dist(&out, &again) < 1e-12);
        // Optimality against every grid candidate.
        let d_out = dist(&out, &point);
        for cand in ball_grid_2d(&center, radius, radius / 40.0) {
            assert!(
                d_out <= dist(&cand, &point) + 1e-6,
                "grid candidate closer than projection"
            );
        }
    }
}

#[test]
fn project_ball_is_nonexpansive() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..300 {
        let dim = rng.random_range(1..6);
        let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let radius = rng.random_range(0.0..2.0);
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let pa = project_ball(&a, &center, radius).unwrap();
        let pb = project_ball(&b, &center, radius).unwrap();
        assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-12);
    }
}

#[test]
fn project_simplex_beats_segment_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..150 {
        let v = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let out = project_simplex(&v).unwrap();
        let sum: f64 = out.as_slice().iter().sum();
        assert!((sum - 1.0).abs() <= PROB_SUM_TOL);
        assert!(out.as_slice().iter().all(|&x| x >= 0.0));
        let d_out = dist(out.as_slice(), &v);
        let steps = 20_000;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let cand = [t, 1.0 - t];
            assert!(d_out <= dist(&cand, &v) + 1e-6);
        }
    }
}

#[test]
fn project_simplex_ball_beats_simplex_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let center = ProbVector::uniform(3).unwrap();
    let grid = simplex_grid_3d(1e-3);
    for case in 0..110 {
        let radius = rng.random_range(0.05..0.8);
        let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let out = project_simplex_ball(&v, &center, radius).unwrap();
        let sum: f64 = out.as_slice().iter().sum();
        assert!((sum - 1.0).abs() <= PROB_SUM_TOL);
        assert!(out.as_slice().iter().all(|&x| x >= -1e-12));
        assert!(dist(out.as_slice(), center.as_slice()) <= radius + BALL_FEASIBILITY_TOL);
        // Idempotence on the (feasible) output.
        let again = project_simplex_ball(out.as_slice(), &center, radius).unwrap();
        assert!(dist(out.as_slice(), again.as_slice()) < 1e-7);
        // Optimality against feasible grid candidates.
        let d_out = dist(out.as_slice(), &v);
        for cand in &grid {
            if dist(cand, center.as_slice()) <= radius {
                assert!(
                    d_out <= dist(cand, &v) + 1e-6,
                    "case {case}: grid candidate closer ({} vs {d_out})",
                    dist(cand, &v)
                );
            }
        }
    }
}

#[test]
fn simplex_ball_matches_analytic_radial_case() {
    // Projecting the vertex (1,0,0) onto the 0.2-ball around the uniform
    // center: the ball binds before the simplex boundary, so the answer is
    // center + 0.2·(v − center)/‖v − center‖.
    let center = ProbVector::uniform(3).unwrap();
    let v = [1.0, 0.0, 0.0];
    let out = project_simplex_ball(&v, &center, 0.2).unwrap();
    let norm = dist(&v, center.as_slice());
    let expected: Vec<f64> = v
        .iter()
        .zip(center.as_slice())
        .map(|(x, c)| c + 0.2 * (x - c) / norm)
        .collect();
    for (a, e) in out.as_slice().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-7, "{a} vs {e}");
    }
}
