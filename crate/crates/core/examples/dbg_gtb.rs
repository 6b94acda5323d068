use incentive_lab::env::gtb::{EconomyState, GtbConfig, LaborCosts, N_ACTIONS};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut wood = Vec::new();
    let mut stone = Vec::new();
    for y in 1..14usize {
        for x in 1..14usize {
            match x % 3 { 1 => wood.push([x, y]), 2 => stone.push([x, y]), _ => {} }
        }
    }
    let cfg = GtbConfig {
        horizon: 100,
        periods: 5,
        order_lifetime: 25,
        collect_skills: vec![1.0; 4],
        labor: LaborCosts { movement: 0.01, gather: 0.01, build: 0.05, trade: 0.01 },
        wood_cells: Some(wood),
        stone_cells: Some(stone),
        ..GtbConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut gathers, mut builds, mut welfare) = (0u64, 0u64, 0.0);
    let mut both = 0u64;
    for ep in 0..200 {
        let mut econ = EconomyState::new(cfg.clone(), ep).unwrap();
        loop {
            let joint: Vec<usize> = (0..4).map(|_| rng.gen_range(0..N_ACTIONS)).collect();
            let out = econ.step(&joint).unwrap();
            welfare += out.designer_reward;
            for a in &econ.agents {
                if a.wood - a.escrow_wood >= 1 && a.stone - a.escrow_stone >= 1 {
                    both += 1;
                }
            }
            if out.done { break; }
        }
        gathers += econ.agents.iter().map(|a| a.gathered).sum::<u64>();
        builds += econ.agents.iter().map(|a| a.built).sum::<u64>();
    }
    println!("200 random episodes: gathers={gathers} builds={builds} both_steps={both} welfare={welfare:.3}");
}
