use dscf_core::data::{split_dataset, Split};
use dscf_core::features::{pretrain_neumf, select_relevant_item, UserTrainItems};
use dscf_core::neumf::NeumfConfig;
use dscf_core::nn::mix_seed;
use dscf_core::synth::{homophily, HomophilyConfig};

fn main() {
    let a: Vec<f64> = std::env::args().skip(1).map(|s| s.parse().unwrap()).collect();
    let cfg = HomophilyConfig {
        community_size: a.first().copied().unwrap_or(25.0) as usize,
        ratings_per_user: a.get(1).copied().unwrap_or(20.0) as usize,
        item_effect: a.get(2).copied().unwrap_or(0.5),
        selection_sharpness: a.get(3).copied().unwrap_or(1.5),
        ..HomophilyConfig::default()
    };
    let n_clusters = cfg.n_clusters;
    let data = homophily(&cfg);
    let dataset = split_dataset(data.ratings.clone(), 0.7, mix_seed(0, 100)).unwrap();
    let train_items = UserTrainItems::build(&dataset);
    let (features, _) = pretrain_neumf(&dataset, &NeumfConfig { factors: 8, learning_rate: 0.01, batch_size: 64, max_epochs: 60, patience: 8, seed: 7, ..NeumfConfig::default() }).unwrap();
    let mut hits = 0usize;
    let mut possible = 0usize;
    'outer: for t in dataset.split_indices(Split::Test).iter() {
        let triple = dataset.triples[*t];
        for u in 0..dataset.n_users as u32 {
            if train_items.items_of(u).len() < 2 { continue; }
            let has = train_items.items_of(u).iter().any(|&(i, _)| i as usize % n_clusters == triple.item as usize % n_clusters);
            if !has { continue; }
            possible += 1;
            if let Some((picked, _)) = select_relevant_item(u, triple.item, &train_items, &features) {
                if picked as usize % n_clusters == triple.item as usize % n_clusters { hits += 1; }
            }
            if possible >= 2500 { break 'outer; }
        }
    }
    println!("cs {} rpu {} ie {} tau {}: {} triples, cluster-match {:.3}", cfg.community_size, cfg.ratings_per_user, cfg.item_effect, cfg.selection_sharpness, data.ratings.triples.len(), hits as f64 / possible as f64);
}
