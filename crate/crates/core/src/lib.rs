//! Turns a raw domain corpus into extended-context reading-comprehension
//! training data.
//!
//! Stages: [`corpus`] ingestion, QA generation with an LLM ([`qagen`]) or
//! regex patterns ([`readcompre`]), similarity clustering under a length
//! budget ([`cluster`]), and exact knapsack packing into fixed-size training
//! sequences ([`pack`]). [`loraplan`] sizes the low-rank adapters used to
//! train on the result; [`pipeline`] runs everything from one config file.

pub mod corpus;
pub mod jsonl;
pub mod qagen;
pub mod tokenize;
pub mod cluster;
pub mod pack;
pub mod readcompre;
pub mod seed;
pub mod loraplan;
pub mod pipeline;
pub mod store;
