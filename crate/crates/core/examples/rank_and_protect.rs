//! Rank bits by Hessian curvature, score the ranking against an exhaustive
//! scan, and choose bits to triplicate under a budget.
use edgerel::dataio::{gen_synthetic, GridGeometry};
use edgerel::fault::{
    exhaustive_scan, hessian_bit_rank, ranking_quality, select_protection, EvalSet, FaultMetric,
    FaultScope,
};
use edgerel::landscape::PowerConfig;
use edgerel::nn::{Batch, ModelSpec, QuantizedModel, TrainConfig};

fn main() -> edgerel::Result<()> {
    let geometry = GridGeometry::rectangular(8, 6)?;
    let batch = Batch::autoencoder(gen_synthetic(1024, 1, &Default::default(), &geometry)?.samples);
    // Two-bit weights keep the exhaustive scan short.
    let spec = ModelSpec::benchmark(2, ModelSpec::BENCHMARK_HIDDEN)?;
    let cfg = TrainConfig {
        lr: 3e-3,
        epochs: 30,
        ..Default::default()
    };
    let theta = edgerel::nn::train(&spec, &batch, &cfg)?.params;
    let model = QuantizedModel::from_params(&spec, theta.as_slice())?;
    let eval = EvalSet::autoencoder(
        gen_synthetic(64, 2, &Default::default(), &geometry)?.samples,
        Some(geometry),
    )?;

    let scan = exhaustive_scan(&model, &eval, FaultMetric::Emd, FaultScope::Encoder, 0.01)?;
    let truth = scan.trials.iter().filter(|t| scan.is_sensitive(t)).count();
    println!("{} addresses, {truth} sensitive", scan.address_space);

    let ranking = hessian_bit_rank(
        &model,
        &batch,
        &PowerConfig {
            k: 4,
            ..Default::default()
        },
        FaultScope::Encoder,
    )?;
    let q = ranking_quality(&ranking, &scan, truth);
    println!(
        "ranking AUC {:.3}, recall at {truth}: {:.3}",
        q.auc.unwrap_or(f64::NAN),
        q.recall_at_k.unwrap_or(f64::NAN)
    );
    for b in ranking.bits.iter().take(5) {
        println!("  {} score {:.3e}", b.addr, b.score);
    }

    for budget in [0.05, 0.2, 1.0] {
        let plan = select_protection(&ranking, budget, Some(&scan))?;
        println!(
            "budget {budget}: {} bits protected, overhead {:.3} (full TMR {}), unprotected sensitive {}",
            plan.protected.len(),
            plan.overhead_fraction,
            plan.full_tmr_overhead_fraction,
            plan.unprotected_sensitive.expect("scored against a scan")
        );
    }
    Ok(())
}
