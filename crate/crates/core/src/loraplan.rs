//! Trainable-parameter budgets for low-rank adapters.
//!
//! An adapter of rank `r` on a `d_in -> d_out` linear layer adds an `r x d_in`
//! down-projection and a `d_out x r` up-projection, i.e. `r * (d_in + d_out)`
//! parameters per layer.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rank used when none is given.
pub const DEFAULT_RANK: usize = 256;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("unknown target {name:?}; valid targets: {}", valid.join(", "))]
    UnknownTarget { name: String, valid: Vec<String> },
    #[error("unknown model preset {0:?}; known presets: llama-7b")]
    UnknownModel(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearShape {
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelGeometry {
    pub name: String,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    /// Per-layer linear projections that can carry an adapter.
    pub linear_targets: BTreeMap<String, LinearShape>,
    pub total_params: u64,
}

/// Attention projections, in canonical order.
pub const ATTENTION_TARGETS: [&str; 4] = ["q", "k", "v", "o"];
/// Feed-forward projections, in canonical order.
pub const FFN_TARGETS: [&str; 3] = ["gate", "up", "down"];

impl ModelGeometry {
    /// Decoder geometry with q/k/v/o attention and a gated feed-forward block.
    pub fn decoder(
        name: &str,
        hidden_dim: usize,
        ffn_dim: usize,
        n_layers: usize,
        total_params: u64,
    ) -> Self {
        let square = LinearShape {
            d_in: hidden_dim,
            d_out: hidden_dim,
        };
        let widen = LinearShape {
            d_in: hidden_dim,
            d_out: ffn_dim,
        };
        let narrow = LinearShape {
            d_in: ffn_dim,
            d_out: hidden_dim,
        };
        let linear_targets = [
            ("q", square),
            ("k", square),
            ("v", square),
            ("o", square),
            ("gate", widen),
            ("up", widen),
            ("down", narrow),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            name: name.to_string(),
            hidden_dim,
            ffn_dim,
            n_layers,
            linear_targets,
            total_params,
        }
    }

    /// 7B LLaMA: hidden 4096, FFN 11008, 32 layers.
    pub fn llama_7b() -> Self {
        Self::decoder("llama-7b", 4096, 11008, 32, 6_738_415_616)
    }

    pub fn preset(name: &str) -> Result<Self, PlanError> {
        match name.to_ascii_lowercase().as_str() {
            "llama-7b" | "llama7b" | "7b" => Ok(Self::llama_7b()),
            _ => Err(PlanError::UnknownModel(name.to_string())),
        }
    }

    /// A preset name, or a path to a JSON geometry file.
    pub fn resolve(spec: &str) -> Result<Self, PlanError> {
        let path = Path::new(spec);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| PlanError::Io {
                path: spec.to_string(),
                message: e.to_string(),
            })?;
            let geom: Self = serde_json::from_str(&text).map_err(|e| PlanError::Io {
                path: spec.to_string(),
                message: e.to_string(),
            })?;
            geom.validate()?;
            return Ok(geom);
        }
        Self::preset(spec)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.hidden_dim == 0 || self.ffn_dim == 0 || self.n_layers == 0 {
            return Err(PlanError::Geometry("dimensions must be positive".into()));
        }
        for (name, shape) in &self.linear_targets {
            let ok_dim = |d: usize| d == self.hidden_dim || d == self.ffn_dim;
            if !ok_dim(shape.d_in) || !ok_dim(shape.d_out) {
                return Err(PlanError::Geometry(format!(
                    "target {name} ({} -> {}) does not match hidden {} or ffn {}",
                    shape.d_in, shape.d_out, self.hidden_dim, self.ffn_dim
                )));
            }
        }
        Ok(())
    }

    fn valid_names(&self) -> Vec<String> {
        self.linear_targets.keys().cloned().collect()
    }

    /// Parses `all-linear`, `qv`, or a comma list such as `q,v,down`.
    /// `_proj` suffixes are accepted.
    pub fn parse_targets(&self, spec: &str) -> Result<BTreeSet<String>, PlanError> {
        let spec = spec.trim();
        match spec.to_ascii_lowercase().as_str() {
            "all-linear" | "all_linear" | "all" => return Ok(self.linear_targets.keys().cloned().collect()),
            "qv" => return self.parse_targets("q,v"),
            "attention" => return self.parse_targets("q,k,v,o"),
            "" | "none" => return Ok(BTreeSet::new()),
            _ => {}
        }
        spec.split(',')
            .map(|raw| {
                let name = raw.trim().to_ascii_lowercase();
                let name = name.strip_suffix("_proj").unwrap_or(&name).to_string();
                if self.linear_targets.contains_key(&name) {
                    Ok(name)
                } else {
                    Err(PlanError::UnknownTarget {
                        name: raw.trim().to_string(),
                        valid: self.valid_names(),
                    })
                }
            })
            .collect()
    }
}

pub fn lora_param_count(
    geom: &ModelGeometry,
    rank: usize,
    targets: &BTreeSet<String>,
) -> Result<u64, PlanError> {
    if rank == 0 {
        return Err(PlanError::ZeroRank);
    }
    let mut per_layer: u64 = 0;
    for t in targets {
        let shape = geom
            .linear_targets
            .get(t)
            .ok_or_else(|| PlanError::UnknownTarget {
                name: t.clone(),
                valid: geom.valid_names(),
            })?;
        per_layer = adapter_params(rank, *shape)
            .and_then(|p| per_layer.checked_add(p))
            .ok_or_else(overflow)?;
    }
    per_layer.checked_mul(geom.n_layers as u64).ok_or_else(overflow)
}

fn overflow() -> PlanError {
    PlanError::Geometry("parameter count overflows u64".into())
}

/// `rank * (d_in + d_out)`, or `None` on overflow.
fn adapter_params(rank: usize, shape: LinearShape) -> Option<u64> {
    let width = (shape.d_in as u64).checked_add(shape.d_out as u64)?;
    (rank as u64).checked_mul(width)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
    pub params_per_layer: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraPlan {
    pub model: String,
    pub rank: usize,
    pub n_layers: usize,
    pub targets: Vec<TargetEntry>,
    pub trainable_params: u64,
    pub total_params: u64,
    pub fraction_of_full: f64,
}

pub fn plan(geom: &ModelGeometry, rank: usize, targets: &BTreeSet<String>) -> Result<LoraPlan, PlanError> {
    let trainable_params = lora_param_count(geom, rank, targets)?;
    let targets = targets
        .iter()
        .map(|t| {
            let s = geom.linear_targets[t];
            TargetEntry {
                name: t.clone(),
                d_in: s.d_in,
                d_out: s.d_out,
                params_per_layer: adapter_params(rank, s).expect("checked by lora_param_count"),
            }
        })
        .collect();
    Ok(LoraPlan {
        model: geom.name.clone(),
        rank,
        n_layers: geom.n_layers,
        targets,
        trainable_params,
        total_params: geom.total_params,
        fraction_of_full: if geom.total_params == 0 {
            0.0
        } else {
            trainable_params as f64 / geom.total_params as f64
        },
    })
}

/// Computes the plan and writes it as pretty JSON to `out`.
pub fn emit_plan(
    geom: &ModelGeometry,
    rank: usize,
    targets: &BTreeSet<String>,
    out: &Path,
) -> Result<LoraPlan, PlanError> {
    let p = plan(geom, rank, targets)?;
    let json = serde_json::to_string_pretty(&p).expect("plan serializes");
    std::fs::write(out, json + "\n").map_err(|e| PlanError::Io {
        path: out.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(p)
}

/// Published budgets for the 7B geometry, as (rank, target spec, count).
pub const REFERENCE_BUDGETS: [(usize, &str, u64); 5] = [
    (256, "qv", 256_000_000),
    (8, "all-linear", 19_000_000),
    (32, "all-linear", 153_000_000),
    (128, "all-linear", 305_000_000),
    (256, "all-linear", 610_000_000),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetComparison {
    pub rank: usize,
    pub targets: String,
    pub computed: u64,
    pub reported: u64,
    /// `(computed - reported) / reported`.
    pub relative_delta: f64,
}

/// Closed-form counts against the published reference budgets. Deltas are
/// reported as-is; several reference rows are not linear in rank.
pub fn compare_with_reference(geom: &ModelGeometry) -> Result<Vec<BudgetComparison>, PlanError> {
    REFERENCE_BUDGETS
        .iter()
        .map(|&(rank, spec, reported)| {
            let computed = lora_param_count(geom, rank, &geom.parse_targets(spec)?)?;
            Ok(BudgetComparison {
                rank,
                targets: spec.to_string(),
                computed,
                reported,
                relative_delta: (computed as f64 - reported as f64) / reported as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn targets(geom: &ModelGeometry, spec: &str) -> BTreeSet<String> {
        geom.parse_targets(spec).unwrap()
    }

    #[test]
    fn rank_8_all_linear_on_7b() {
        let g = ModelGeometry::llama_7b();
        assert_eq!(lora_param_count(&g, 8, &targets(&g, "all-linear")).unwrap(), 19_988_480);
    }

    #[test]
    fn rank_2_single_query_target() {
        let g = ModelGeometry::llama_7b();
        assert_eq!(lora_param_count(&g, 2, &targets(&g, "q")).unwrap(), 2 * 8192 * 32);
    }

    #[test]
    fn rank_256_plans() {
        let g = ModelGeometry::llama_7b();
        let all = plan(&g, 256, &targets(&g, "all-linear")).unwrap();
        assert_eq!(all.trainable_params, 639_631_360);
        assert!((all.fraction_of_full - 0.0949).abs() < 1e-3);
        assert_eq!(lora_param_count(&g, 256, &targets(&g, "qv")).unwrap(), 134_217_728);
        let none = plan(&g, 256, &BTreeSet::new()).unwrap();
        assert_eq!((none.trainable_params, none.fraction_of_full), (0, 0.0));
    }

    #[test]
    fn zero_rank_and_unknown_targets_rejected() {
        let g = ModelGeometry::llama_7b();
        assert!(matches!(lora_param_count(&g, 0, &targets(&g, "q")), Err(PlanError::ZeroRank)));
        match g.parse_targets("q,lm_head") {
            Err(PlanError::UnknownTarget { name, valid }) => {
                assert_eq!(name, "lm_head");
                assert_eq!(valid.len(), 7);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(targets(&g, "q_proj, V_PROJ"), targets(&g, "qv"));
    }

    #[test]
    fn reference_comparison_flags_deltas() {
        let rows = compare_with_reference(&ModelGeometry::llama_7b()).unwrap();
        let r8 = rows.iter().find(|r| r.rank == 8).unwrap();
        assert!(r8.relative_delta.abs() < 0.06);
        let qv = rows.iter().find(|r| r.targets == "qv").unwrap();
        assert!(qv.relative_delta < -0.4);
    }

    #[test]
    fn geometry_validation_and_file_resolution() {
        let mut g = ModelGeometry::llama_7b();
        assert!(g.validate().is_ok());
        g.linear_targets.get_mut("q").unwrap().d_out = 17;
        assert!(g.validate().is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.json");
        let tiny = ModelGeometry::decoder("tiny", 8, 32, 2, 1000);
        std::fs::write(&path, serde_json::to_string(&tiny).unwrap()).unwrap();
        assert_eq!(ModelGeometry::resolve(path.to_str().unwrap()).unwrap(), tiny);
        assert!(ModelGeometry::resolve("gpt-9").is_err());
    }

    #[test]
    fn emitted_config_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("plan.json");
        let g = ModelGeometry::llama_7b();
        let p = emit_plan(&g, 256, &targets(&g, "all-linear"), &out).unwrap();
        let back: LoraPlan = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.targets.len(), 7);
    }

    #[test]
    fn huge_geometry_reports_overflow() {
        let g = ModelGeometry::decoder("huge", usize::MAX / 2, usize::MAX / 2, 3, 1);
        let all = targets(&g, "all-linear");
        assert!(matches!(lora_param_count(&g, 4, &all), Err(PlanError::Geometry(_))));
        assert!(plan(&g, 4, &all).is_err());
    }
}
