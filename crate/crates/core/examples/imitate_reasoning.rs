//! Learns a source's reasoning from its expert paths by adversarial
//! imitation, then compares generated paths with the expert ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semcomm::encoder::{train_encoder, EncoderConfig};
use semcomm::grml::{train, TrainConfig};
use semcomm::kg::{generate_expert_paths, toy, ExpertPathOptions};
use semcomm::policy::rollout;
use semcomm::ExplicitSemantics;

fn main() -> semcomm::Result<()> {
    let kg = toy::benchmark_forest();
    let table = train_encoder(&kg, &EncoderConfig::default().with_dim(16))?.table;
    let experts = generate_expert_paths(&kg, &ExpertPathOptions::new(3, 50, 1).terminal())?;
    println!("{} expert paths, e.g. {}", experts.len(), experts.paths[0]);

    let cfg = TrainConfig {
        max_length: 3,
        ..TrainConfig::tuned()
    };
    let out = train(&kg, &experts, &table, &cfg)?;
    println!("{:>5} {:>10} {:>10} {:>8} {:>9}", "iter", "comp loss", "interp", "d_js", "accuracy");
    for r in out.log.records.iter().filter(|r| r.iter % 10 == 1 || r.iter == out.log.len()) {
        println!("{:>5} {:>10.4} {:>10.4} {:>8.4} {:>9.3}", r.iter, r.comp_loss, r.interp_loss, r.d_js, r.accuracy);
    }
    match out.converged_at {
        Some(i) => println!("distance stayed below the threshold from iteration {i}"),
        None => println!("did not converge"),
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for expert in experts.paths.iter().take(4) {
        let generated = rollout(&out.policy, &kg, &table, &ExplicitSemantics::entity(expert.start), 3, &mut rng)?;
        println!("expert {expert:<28} generated {}", generated.path);
    }
    Ok(())
}
