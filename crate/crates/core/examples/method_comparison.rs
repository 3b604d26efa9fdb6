//! Compares unary argmax, LBP, QP and constrained QP on planted scenes.
//!
//! Usage: `method_comparison [scenes] [objects] [noise] [unary_weight]`

use std::time::Instant;

use gcrf::baselines::{lbp_map, LbpConfig};
use gcrf::eval::{compute_metrics, format_method_table, generate, summarize, SceneConfig};
use gcrf::{solve, solve_constrained, SolverConfig};

fn main() -> gcrf::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scenes: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(100);
    let objects: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let noise: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.6);
    let weight: f64 = args
        .get(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(gcrf::eval::scene::DEFAULT_UNARY_WEIGHT);

    let cfg = SolverConfig::default();
    let mut reports: [Vec<_>; 4] = Default::default();
    let mut cqp_wins = 0;
    let start = Instant::now();
    for seed in 0..scenes {
        let mut config = SceneConfig::new(40, 40, objects, 7, noise);
        config.unary_weight = weight;
        let scene = generate(&config, seed)?;
        let sets = scene.constraint_sets()?;
        let k = scene.graph.num_labels();
        let truth = &scene.true_labels;

        let unary = scene.unary_argmax();
        let (lbp, _) = lbp_map(&scene.graph, &scene.potentials, &LbpConfig::default())?;
        let (m, _) = solve(&scene.graph, &scene.potentials, &cfg)?;
        let qp = gcrf::extract_labeling(&m);
        let (_, cqp, _) = solve_constrained(&scene.graph, &scene.potentials, &sets, &cfg)?;

        let r: Vec<_> = [&unary, &lbp, &qp, &cqp]
            .into_iter()
            .map(|l| compute_metrics(l, truth, k))
            .collect::<gcrf::Result<_>>()?;
        if r[3].macro_avg.f1 >= r[2].macro_avg.f1 {
            cqp_wins += 1;
        }
        for (acc, rep) in reports.iter_mut().zip(r) {
            acc.push(rep);
        }
    }
    let names = ["Unary argmax", "LBP", "QP", "Constrained QP"];
    let rows: Vec<_> = names
        .iter()
        .zip(&reports)
        .map(|(n, r)| (*n, summarize(r)))
        .collect();
    print!("{}", format_method_table(&rows));
    let f1: Vec<String> = rows.iter().map(|(_, s)| format!("{:.6}", s.f1.mean)).collect();
    println!("mean F1: {}", f1.join(" / "));
    println!(
        "constrained >= unconstrained on {cqp_wins}/{scenes} scenes ({:.1}s)",
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
