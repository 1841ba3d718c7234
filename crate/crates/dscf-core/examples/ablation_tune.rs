use dscf_core::data::{split_dataset, Split};
use dscf_core::features::{pretrain_neumf, SequenceSet};
use dscf_core::graph::SocialGraph;
use dscf_core::model::Variant;
use dscf_core::neumf::NeumfConfig;
use dscf_core::nn::mix_seed;
use dscf_core::synth::{homophily, HomophilyConfig};
use dscf_core::train::{evaluate_dscf, train_dscf, TrainConfig};

fn main() {
    // args: item_effect selection_sharpness epochs lr d dropout seeds [h]
    let a: Vec<f64> = std::env::args().skip(1).map(|s| s.parse().unwrap()).collect();
    let gen_cfg = HomophilyConfig {
        item_effect: a.first().copied().unwrap_or(0.3),
        selection_sharpness: a.get(1).copied().unwrap_or(1.0),
        ..HomophilyConfig::default()
    };
    let epochs = a.get(2).copied().unwrap_or(30.0) as usize;
    let lr = a.get(3).copied().unwrap_or(0.005);
    let d = a.get(4).copied().unwrap_or(16.0) as usize;
    let dropout = a.get(5).copied().unwrap_or(0.2);
    let seeds = a.get(6).copied().unwrap_or(3.0) as u64;
    let h = a.get(7).copied().unwrap_or(4.0) as usize;

    let data = homophily(&gen_cfg);
    let mean: f64 = data.ratings.triples.iter().map(|t| t.rating as f64).sum::<f64>() / data.ratings.triples.len() as f64;
    let var: f64 = data.ratings.triples.iter().map(|t| (t.rating as f64 - mean).powi(2)).sum::<f64>() / data.ratings.triples.len() as f64;
    println!(
        "gen: ie {} tau {} -> {} triples, mean {:.2} sd {:.2} | train: ep {} lr {} d {} drop {} H {}",
        gen_cfg.item_effect, gen_cfg.selection_sharpness, data.ratings.triples.len(), mean, var.sqrt(), epochs, lr, d, dropout, h
    );

    let mut wins = 0;
    for seed in 0..seeds {
        let dataset = split_dataset(data.ratings.clone(), 0.7, mix_seed(seed, 100)).unwrap();
        let graph = SocialGraph::build(&data.trust, dataset.n_users, false);
        let (features, _) = pretrain_neumf(&dataset, &NeumfConfig { factors: 8, learning_rate: 0.01, batch_size: 64, max_epochs: 60, patience: 8, seed: mix_seed(seed, 200), ..NeumfConfig::default() }).unwrap();
        let sequences = SequenceSet::build(&dataset, &graph, &features, 3, h, mix_seed(seed, 303)).unwrap();
        let mut rmse = Vec::new();
        for variant in [Variant::Full, Variant::NoOpinion, Variant::NoItemOpinion] {
            let config = TrainConfig {
                embedding_size: d, batch_size: 64, learning_rate: lr, dropout,
                walk_length: 3, num_sequences: h, seed, max_epochs: epochs, patience: 5,
                variant, mask_padding: false, stop_at_train_loss: None,
            };
            let outcome = train_dscf(&dataset, &sequences, &config).unwrap();
            let test = evaluate_dscf(&outcome.model, &outcome.store, &dataset, &sequences, Split::Test).unwrap();
            rmse.push(test.rmse);
        }
        let ok = rmse[0] < rmse[1] && rmse[1] < rmse[2];
        if ok { wins += 1; }
        println!("  seed {}: full {:.4} no-op {:.4} no-item {:.4}  {}", seed, rmse[0], rmse[1], rmse[2], if ok { "ORDERED" } else { "-" });
    }
    println!("ordered in {}/{} seeds", wins, seeds);
}
