//! Jensen-Shannon distance between two path distributions, and a comparator
//! trained on them against its closed-form optimum.

use semcomm::comparator::{
    comparator_distribution_grad, comparator_forward, featurize_path, optimal_comparator_value, path_feature_dim,
    semantic_distance, ComparatorNetwork, PathDistribution,
};
use semcomm::encoder::{train_encoder, EncoderConfig};
use semcomm::kg::{generate_expert_paths, toy, ExpertPathOptions};
use semcomm::nn::Adam;

fn main() -> semcomm::Result<()> {
    let kg = toy::benchmark_forest();
    let table = train_encoder(&kg, &EncoderConfig::default().with_dim(8))?.table;
    let mut paths = generate_expert_paths(&kg, &ExpertPathOptions::new(2, 40, 3))?.paths;
    paths.sort_by_key(|p| p.key());
    paths.dedup();
    paths.truncate(4);

    let expert = PathDistribution::from_weights(paths.iter().cloned().zip([0.4, 0.3, 0.2, 0.1]))?;
    let generated = PathDistribution::from_weights(paths.iter().cloned().zip([0.1, 0.2, 0.3, 0.4]))?;
    let (gamma, d_js) = semantic_distance(&expert, &generated)?;
    println!("gamma {gamma:.4}, d_js {d_js:.4} (0 for identical, log 2 = 0.6931 for disjoint)");
    println!("distance to itself: {:.1e}", semantic_distance(&expert, &expert)?.1);

    let mut net = ComparatorNetwork::seeded(path_feature_dim(&table, 2), 32, 0);
    let mut adam = Adam::new(0.01, net.mlp().param_count());
    for _ in 0..2000 {
        let g = comparator_distribution_grad(&net, &expert, &generated, &table, 2)?;
        adam.step(net.mlp_mut(), &g, true);
    }
    for p in &paths {
        let d = comparator_forward(&net, &featurize_path(p, &table, 2)?)?;
        let opt = optimal_comparator_value(expert.probability(p), generated.probability(p))?;
        println!("{p:<24} D {d:.3}  optimum {opt:.3}");
    }
    Ok(())
}
