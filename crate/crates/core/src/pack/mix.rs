use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ItemKind, PackItem};
use crate::corpus::GeneralInstruction;
use crate::seed;
use crate::tokenize::Tokenizer;

/// Placeholder share of instruction tokens in the packed pool. Not derived
/// from any published mixing ratio; set it explicitly for real runs.
pub const DEFAULT_GENERAL_TOKEN_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub general_token_fraction: f64,
    pub rng_seed: u64,
}

impl MixConfig {
    pub fn new(general_token_fraction: f64, rng_seed: u64) -> Result<Self, String> {
        if !(0.0..1.0).contains(&general_token_fraction) {
            return Err(format!(
                "general_token_fraction {general_token_fraction} must be in [0, 1)"
            ));
        }
        Ok(Self {
            general_token_fraction,
            rng_seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixOutcome {
    pub items: Vec<PackItem>,
    pub cluster_tokens: usize,
    pub instruction_tokens: usize,
    pub achieved_fraction: f64,
    /// Instructions ran out before the target fraction was reached.
    pub clamped: bool,
}

/// Adds general instructions, sampled without replacement, until their share
/// of all tokens reaches the target, then shuffles the combined pool.
pub fn mix_items(
    cluster_items: Vec<PackItem>,
    instructions: &[GeneralInstruction],
    cfg: &MixConfig,
    tok: &dyn Tokenizer,
) -> MixOutcome {
    let cluster_tokens: usize = cluster_items.iter().map(|i| i.token_count).sum();
    let target = cfg.general_token_fraction;
    let mut items = cluster_items;
    let mut instruction_tokens = 0usize;
    let share = |instr: usize| {
        let all = cluster_tokens + instr;
        if all == 0 {
            0.0
        } else {
            instr as f64 / all as f64
        }
    };

    let mut clamped = false;
    if target > 0.0 {
        let mut order: Vec<&GeneralInstruction> = instructions.iter().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(cfg.rng_seed, 1)));
        let mut supply = order.into_iter();
        while share(instruction_tokens) < target {
            let Some(g) = supply.next() else {
                clamped = true;
                break;
            };
            let token_count = tok.count(&g.text);
            if token_count == 0 {
                continue;
            }
            instruction_tokens += token_count;
            items.push(PackItem {
                id: format!("instruction-{}", g.id),
                text: g.text.clone(),
                token_count,
                kind: ItemKind::Instruction,
            });
        }
        if clamped {
            debug!(
                "instruction supply exhausted at share {:.4} (target {target})",
                share(instruction_tokens)
            );
        }
    }

    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(cfg.rng_seed, 2)));
    MixOutcome {
        items,
        cluster_tokens,
        instruction_tokens,
        achieved_fraction: share(instruction_tokens),
        clamped,
    }
}
