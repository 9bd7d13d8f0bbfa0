//! LLM-based QA-pair generation: prompt rendering, service calls, reply
//! repair, caching, and distillation export.

pub mod cache;
pub mod distill;
pub mod generate;
pub mod mock;
pub mod prompt;
pub mod repair;
pub mod service;

pub use cache::{GenerationCache, GenerationRecord, GenerationStatus};
pub use distill::{export_distillation, sample_distillation, DistillError, DEFAULT_DISTILL_SAMPLES};
pub use generate::{generate_one, generate_qa};
pub use mock::{MockChatService, MOCK_ENDPOINT};
pub use prompt::{render_prompt, PromptTemplate, TemplateError, DEFAULT_TEMPLATE};
pub use repair::{canonical_serialize, parse_qa_response, ParsedResponse, RawPair, RepairError, RepairStage};
pub use service::{Backoff, ChatClientConfig, ChatService, HttpChatService, ServiceError, DEFAULT_MODEL};
