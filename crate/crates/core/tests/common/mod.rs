#![allow(dead_code)]

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use readpack_core::cluster::HashEmbedder;
use readpack_core::pipeline::{PipelineConfig, Services};
use readpack_core::qagen::MockChatService;

const TOPICS: [[&str; 6]; 5] = [
    ["insulin", "glucose", "pancreas", "diabetes", "hormone", "metabolism"],
    ["tumor", "biopsy", "oncology", "metastasis", "chemotherapy", "lesion"],
    ["antibody", "antigen", "vaccine", "immune", "lymphocyte", "pathogen"],
    ["bond", "yield", "coupon", "maturity", "treasury", "duration"],
    ["equity", "dividend", "earnings", "valuation", "shareholder", "buyback"],
];
const FILLER: [&str; 8] = ["the", "study", "reported", "a", "marked", "change", "in", "levels"];

fn sentence(rng: &mut ChaCha8Rng, topic: &[&str; 6]) -> String {
    let n = rng.gen_range(6..14);
    let mut words: Vec<&str> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.6) {
                *topic.choose(rng).unwrap()
            } else {
                *FILLER.choose(rng).unwrap()
            }
        })
        .collect();
    words[0] = "Researchers";
    format!("{} noted", words.join(" "))
}

/// Deterministic topical corpus: documents and general instructions.
pub fn write_corpus(dir: &Path, n_docs: usize, n_instructions: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = String::new();
    for i in 0..n_docs {
        let topic = &TOPICS[i % TOPICS.len()];
        let mut sents: Vec<String> = (0..rng.gen_range(3..12)).map(|_| sentence(&mut rng, topic)).collect();
        if rng.gen_bool(0.5) {
            let k = rng.gen_range(0..sents.len());
            sents[k] = format!("{}. Therefore, the {} trend persisted", sents[k], topic[0]);
        }
        let text = sents.join(". ") + ".";
        docs.push_str(&serde_json::to_string(&serde_json::json!({"id": format!("doc-{i:04}"), "text": text})).unwrap());
        docs.push('\n');
    }
    std::fs::write(dir.join("docs.jsonl"), docs).unwrap();

    let mut instr = String::new();
    for i in 0..n_instructions {
        let len = rng.gen_range(5..40);
        let words: Vec<&str> = (0..len).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
        instr.push_str(&serde_json::to_string(&serde_json::json!({"text": format!("Instruction {i}: {}", words.join(" "))})).unwrap());
        instr.push('\n');
    }
    std::fs::write(dir.join("general.jsonl"), instr).unwrap();
}

pub fn config_text(capacity: usize) -> String {
    format!(
        r#"
[ingest]
corpus = "docs.jsonl"
domain = "biomedicine"
instructions = ["general.jsonl"]

[qa]
method = "llm"
endpoint = "mock://"
concurrency = 4

[cluster]
lmax = 700
dmax = 8
tau = 0.7
seed = 7

[pack]
capacity = {capacity}
general_fraction = 0.15
seed = 3

[output]
store = "store"
training_file = "train.jsonl"
"#
    )
}

pub fn config(capacity: usize) -> PipelineConfig {
    PipelineConfig::from_toml_str(&config_text(capacity)).unwrap()
}

pub fn offline_services() -> Services {
    Services {
        chat: Box::new(MockChatService::new()),
        embedder: Box::new(HashEmbedder::default()),
    }
}
