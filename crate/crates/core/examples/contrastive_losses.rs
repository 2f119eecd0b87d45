// Evaluate every contrastive objective on one batch of user and item rows.

use hfgcl::objectives::{bpr_loss, fused_embedding, pair_objective};
use hfgcl::{ContrastiveObjective, Matrix, ModelConfig, ObjectiveConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-0.5..0.5)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

pub fn run_example() -> hfgcl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, d) = (8, 4);
    let (eu, ei, ej) = (random(b, d, &mut rng), random(b, d, &mut rng), random(b, d, &mut rng));

    let bpr = bpr_loss(&eu, &ei, &ej)?;
    println!("bpr               {:.6}", bpr.value);

    let fused = fused_embedding(&eu, &ei, 0.5)?;
    println!("fused row 0       {:?}", fused.row(0));

    let cfg: ObjectiveConfig = ModelConfig::default().objective_config()?;
    for objective in [
        ContrastiveObjective::UserItem,
        ContrastiveObjective::SelfOnly,
        ContrastiveObjective::UserItemSelf,
        ContrastiveObjective::Concat,
        ContrastiveObjective::Fusion,
    ] {
        let out = pair_objective(objective, &eu, &ei, &cfg)?;
        println!("{:<17} {:.6}", objective.name(), out.value);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("loss example");
}
