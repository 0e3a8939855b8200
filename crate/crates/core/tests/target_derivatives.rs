use sysrisk::trajectory::{PerturbedTargets, Segment, Shape, TargetTrajectory};

#[test]
fn derivative_matches_central_difference() {
    let traj = TargetTrajectory::new(vec![
        Segment {
            start: 0.0,
            end: 0.5,
            shape: Shape::Sinusoid {
                amplitude: 0.5,
                frequency: 1.0,
                phase: 0.0,
                offset: 1.0,
            },
        },
        Segment {
            start: 0.5,
            end: 1.0,
            shape: Shape::Linear {
                slope: -0.3,
                intercept: 1.0,
            },
        },
    ])
    .unwrap();
    let h = 1e-6;
    for k in 1..100 {
        let t = k as f64 / 100.0;
        if (t - 0.5).abs() < 1e-3 {
            continue;
        }
        let (_, d) = traj.eval(t).unwrap();
        let fd = (traj.value(t + h).unwrap() - traj.value(t - h).unwrap()) / (2.0 * h);
        assert!((d - fd).abs() < 1e-6, "t = {t}: {d} vs {fd}");
    }
}

#[test]
fn perturbations_are_exact_offsets() {
    let base = TargetTrajectory::sinusoid(0.5, 1.0, 0.0, 1.0).unwrap();
    let p = PerturbedTargets::new(base, 0.1).unwrap();
    for k in 0..=50 {
        let t = k as f64 / 50.0;
        let xi = p.xi(t).unwrap();
        assert!((p.xi_plus(t).unwrap() - xi - 0.1).abs() <= f64::EPSILON * 4.0);
        assert!((xi - p.xi_minus(t).unwrap() - 0.1).abs() <= f64::EPSILON * 4.0);
    }
}
