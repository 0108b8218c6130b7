use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::records::InteractionRecord;
use crate::error::{DrError, Result};
use crate::retrieval::ItemPathMapping;
use crate::rng;

/// Planted-cluster corpus: every user mostly consumes one cluster's items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub clusters: usize,
    pub items_per_cluster: usize,
    pub users: usize,
    pub interactions_per_user: usize,
    /// Chance that an interaction comes from the user's secondary cluster.
    pub secondary_weight: f64,
    /// Zipf exponent of item popularity inside a cluster; 0 is uniform.
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clusters: 8,
            items_per_cluster: 250,
            users: 5000,
            interactions_per_user: 30,
            secondary_weight: 0.2,
            zipf_exponent: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<InteractionRecord>,
    /// Planted cluster of raw item id `i`.
    pub item_cluster: Vec<usize>,
    pub user_primary: Vec<usize>,
    pub user_secondary: Vec<Option<usize>>,
}

pub fn synth_clusters(config: &SynthConfig) -> Result<SynthCorpus> {
    let g = config.clusters;
    let per = config.items_per_cluster;
    if g == 0 || per == 0 {
        return Err(DrError::config(
            "need at least one cluster with at least one item",
        ));
    }
    if config.interactions_per_user > per {
        return Err(DrError::config(
            "interactions per user exceed the items of one cluster",
        ));
    }
    if !(0.0..=1.0).contains(&config.secondary_weight) {
        return Err(DrError::config("secondary weight must lie in [0, 1]"));
    }
    let zipf = Zipf::new(per as f64, config.zipf_exponent)
        .map_err(|e| DrError::config(format!("zipf exponent: {e}")))?;
    let mut rng = rng::stream(config.seed, rng::SYNTH);
    let item_cluster: Vec<usize> = (0..g * per).map(|i| i / per).collect();
    let mut records = Vec::with_capacity(config.users * config.interactions_per_user);
    let mut user_primary = Vec::with_capacity(config.users);
    let mut user_secondary = Vec::with_capacity(config.users);

    for user in 0..config.users {
        let primary = rng.random_range(0..g);
        let secondary = if g > 1 && config.secondary_weight > 0.0 {
            let s = rng.random_range(0..g - 1);
            Some(if s >= primary { s + 1 } else { s })
        } else {
            None
        };
        let mut taken = HashSet::new();
        for t in 0..config.interactions_per_user {
            let mut cluster = match secondary {
                Some(s) if rng.random_bool(config.secondary_weight) => s,
                _ => primary,
            };
            if (0..per).all(|l| taken.contains(&(cluster * per + l))) {
                cluster = primary;
            }
            let mut item = None;
            for _ in 0..64 {
                let local = zipf.sample(&mut rng) as usize - 1;
                let candidate = cluster * per + local;
                if !taken.contains(&candidate) {
                    item = Some(candidate);
                    break;
                }
            }
            let item = item
                .or_else(|| {
                    (0..per)
                        .map(|l| cluster * per + l)
                        .find(|i| !taken.contains(i))
                })
                .expect("primary cluster has room for every interaction");
            taken.insert(item);
            records.push(InteractionRecord {
                user_id: user as u64,
                item_id: item as u64,
                rating: 5.0,
                timestamp: t as u64,
            });
        }
        user_primary.push(primary);
        user_secondary.push(secondary);
    }
    Ok(SynthCorpus {
        records,
        item_cluster,
        user_primary,
        user_secondary,
    })
}

/// Fraction of item–path assignments whose item carries its path's
/// majority label.
pub fn cluster_purity(mapping: &ItemPathMapping, labels: &[usize]) -> Result<f64> {
    if labels.len() != mapping.num_items() {
        return Err(DrError::shape("one label per mapped item is required"));
    }
    let mut agree = 0usize;
    let mut total = 0usize;
    for items in mapping.inverted().values() {
        let mut counts = std::collections::HashMap::new();
        for &i in items {
            *counts.entry(labels[i]).or_insert(0usize) += 1;
        }
        agree += counts.values().max().copied().unwrap_or(0);
        total += items.len();
    }
    Ok(if total == 0 {
        0.0
    } else {
        agree as f64 / total as f64
    })
}
