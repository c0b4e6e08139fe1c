// batch probe: convergence rate, solve time, TD identity and pyramid containment
use nalgebra::Vector3;
use phaseopt::model::pyramid;
use phaseopt::nlp::{assemble, ProblemMode};
use phaseopt::scenarios::{batch, BatchProtocol};
use phaseopt::solver::{sqp, SqpOptions};
use phaseopt::TerrainKind;
use std::time::Instant;

fn main() {
    let protocol = BatchProtocol::new(4, 42, TerrainKind::Plane, ProblemMode::Proposed);
    for scenario in batch(&protocol) {
        let id = scenario.id.clone();
        let problem = assemble(scenario).unwrap();
        let xi0 = problem.initial_guess();
        let t0 = Instant::now();
        let (solution, report) = sqp(&problem, &xi0, &SqpOptions::from_scenario(&problem.scenario));
        let wall = t0.elapsed().as_secs_f64();
        let last = report.history.last().unwrap();
        println!(
            "{id}: {:?} iters={} wall={:.1}s phi_eq={:.2e} phi_in={:.2e}",
            report.termination, report.iterations, wall, last.phi_eq, last.phi_ineq
        );
        if !report.converged() {
            continue;
        }
        // TD identity via the analytic acceleration and via sampled forces.
        let mass = problem.scenario.robot.mass;
        let g = problem.scenario.robot.gravity;
        let mut worst_td: f64 = 0.0;
        for i in 0..=300 {
            let t = 3.0 * i as f64 / 300.0;
            let (_, _, a) = solution.body(t);
            let fsum: Vector3<f64> = (0..4).map(|l| solution.force(l, t)).sum();
            worst_td = worst_td.max((a * mass - g * mass - fsum).norm());
        }
        // Pyramid containment of sampled stance forces.
        let mut worst_fc: f64 = f64::MIN;
        for leg in 0..4 {
            for i in 0..1000 {
                let t = 3.0 * (i as f64 + 0.5) / 1000.0;
                if !solution.in_stance(leg, t) {
                    continue;
                }
                let p = solution.foot(leg, t);
                let frame = problem.scenario.terrain.frame(p.x, p.y);
                let pyr = pyramid(&frame, problem.scenario.terrain.friction, 500.0).unwrap();
                worst_fc = worst_fc.max(pyr.max_violation(&solution.force(leg, t)));
            }
        }
        println!("   worst TD residual {worst_td:.3e} N, worst pyramid violation {worst_fc:.3e} N");
    }
}
