use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{debug, warn};

use super::cache::{GenerationCache, GenerationRecord, GenerationStatus};
use super::prompt::PromptTemplate;
use super::repair::parse_qa_response;
use super::service::{with_retry, ChatClientConfig, ChatService};
use crate::corpus::{Document, Origin, QaPair};
use crate::jsonl::JsonlError;

/// Runs one document through the service and the reply parser.
pub fn generate_one(
    doc: &Document,
    template: &PromptTemplate,
    service: &dyn ChatService,
    config: &ChatClientConfig,
) -> GenerationRecord {
    let prompt = template.render(doc);
    let (reply, attempts) = with_retry(config.retry_limit, &config.backoff, || {
        service.complete(&config.model_name, &prompt)
    });
    let mut record = GenerationRecord {
        doc_id: doc.id.clone(),
        prompt,
        raw_response: String::new(),
        pairs: Vec::new(),
        status: GenerationStatus::ServiceFailed,
        attempt_count: attempts,
        repairs: Vec::new(),
        error: None,
    };
    let raw = match reply {
        Ok(raw) => raw,
        Err(e) => {
            warn!("{}: service failed after {attempts} attempts: {e}", doc.id);
            record.error = Some(e.to_string());
            return record;
        }
    };
    match parse_qa_response(&raw) {
        Ok(parsed) => {
            record.pairs = parsed
                .pairs
                .into_iter()
                .map(|p| QaPair::new(p.question, p.answer, &doc.id, Origin::Llm))
                .collect();
            record.repairs = parsed.repairs;
            record.status = GenerationStatus::Ok;
        }
        Err(e) => {
            debug!("{}: {e}", doc.id);
            record.repairs = vec![e.stage];
            record.error = Some(e.to_string());
            record.status = GenerationStatus::ParseFailed;
        }
    }
    record.raw_response = raw;
    record
}

/// Generates QA pairs for every document, reusing cached `ok` outcomes.
///
/// At most `config.max_concurrency` requests are in flight. The result has
/// one record per input document, in input order.
pub fn generate_qa(
    docs: &[Document],
    template: &PromptTemplate,
    service: &dyn ChatService,
    config: &ChatClientConfig,
    cache: &GenerationCache,
) -> Result<Vec<GenerationRecord>, JsonlError> {
    let key = template.digest();
    let mut slots: Vec<Option<GenerationRecord>> = docs
        .iter()
        .map(|d| cache.get(&key, &d.id).cloned())
        .collect();
    let pending: Vec<usize> = (0..docs.len()).filter(|&i| slots[i].is_none()).collect();
    debug!(
        "genqa: {} cached, {} to generate",
        docs.len() - pending.len(),
        pending.len()
    );

    if !pending.is_empty() {
        let next = AtomicUsize::new(0);
        let done: Mutex<Vec<(usize, GenerationRecord)>> = Mutex::new(Vec::with_capacity(pending.len()));
        let first_error: Mutex<Option<JsonlError>> = Mutex::new(None);
        let workers = config.max_concurrency.max(1).min(pending.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&i) = pending.get(k) else { break };
                    let record = generate_one(&docs[i], template, service, config);
                    if let Err(e) = cache.append(&key, &record) {
                        first_error.lock().unwrap().get_or_insert(e);
                        break;
                    }
                    done.lock().unwrap().push((i, record));
                });
            }
        });
        if let Some(e) = first_error.into_inner().unwrap() {
            return Err(e);
        }
        for (i, record) in done.into_inner().unwrap() {
            slots[i] = Some(record);
        }
    }

    Ok(slots
        .into_iter()
        .map(|r| r.expect("every slot is cached or generated"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qagen::mock::MockChatService;
    use crate::qagen::service::{Backoff, ServiceError};
    use std::sync::atomic::AtomicUsize;

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document {
                id: format!("d{i}"),
                text: format!("Document {i} describes a finding. It has more detail here."),
                domain: "biomedicine".into(),
                meta: None,
            })
            .collect()
    }

    fn config(concurrency: usize) -> ChatClientConfig {
        ChatClientConfig {
            endpoint: "test".into(),
            model_name: "m".into(),
            max_concurrency: concurrency,
            retry_limit: 2,
            backoff: Backoff::NONE,
        }
    }

    /// Fails the first `failures` calls for every prompt containing `marker`.
    struct Flaky {
        marker: String,
        failures: usize,
        seen: AtomicUsize,
        calls: AtomicUsize,
    }

    impl ChatService for Flaky {
        fn complete(&self, model: &str, prompt: &str) -> Result<String, ServiceError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if prompt.contains(&self.marker)
                && self.seen.fetch_add(1, Ordering::SeqCst) < self.failures
            {
                return Err(ServiceError::Transport("reset".into()));
            }
            MockChatService::new().complete(model, prompt)
        }
    }

    #[test]
    fn output_order_matches_input_under_concurrency() {
        let docs = docs(40);
        let mock = MockChatService::new();
        let out = generate_qa(&docs, &PromptTemplate::default(), &mock, &config(8), &GenerationCache::in_memory()).unwrap();
        let ids: Vec<_> = out.iter().map(|r| r.doc_id.clone()).collect();
        let want: Vec<_> = docs.iter().map(|d| d.id.clone()).collect();
        assert_eq!(ids, want);
        assert!(out.iter().all(|r| r.is_ok() && !r.pairs.is_empty()));
        assert_eq!(mock.calls(), 40);
    }

    #[test]
    fn transient_failure_is_retried() {
        let docs = docs(3);
        let svc = Flaky {
            marker: "Document 1 ".into(),
            failures: 2,
            seen: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        };
        let out = generate_qa(&docs, &PromptTemplate::default(), &svc, &config(1), &GenerationCache::in_memory()).unwrap();
        assert!(out.iter().all(GenerationRecord::is_ok));
        assert_eq!(out[1].attempt_count, 3);
        assert_eq!(out[0].attempt_count, 1);
    }

    #[test]
    fn exhausted_retries_record_service_failure() {
        let docs = docs(3);
        let svc = Flaky {
            marker: "Document 2 ".into(),
            failures: usize::MAX,
            seen: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        };
        let out = generate_qa(&docs, &PromptTemplate::default(), &svc, &config(2), &GenerationCache::in_memory()).unwrap();
        assert_eq!(out[2].status, GenerationStatus::ServiceFailed);
        assert_eq!(out[2].attempt_count, 3);
        assert!(out[2].pairs.is_empty());
        assert!(out[..2].iter().all(GenerationRecord::is_ok));
        assert_eq!(svc.calls.load(Ordering::SeqCst), 5);
    }

    #[test]
    fn warm_cache_makes_no_calls() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let docs = docs(5);
        let cold = MockChatService::new();
        let first = generate_qa(&docs, &PromptTemplate::default(), &cold, &config(3), &GenerationCache::open(&path).unwrap()).unwrap();
        assert_eq!(cold.calls(), 5);

        let warm = MockChatService::new();
        let second = generate_qa(&docs, &PromptTemplate::default(), &warm, &config(3), &GenerationCache::open(&path).unwrap()).unwrap();
        assert_eq!(warm.calls(), 0);
        assert_eq!(first, second);

        // a different template is a different key
        let other = PromptTemplate::new("{DOMAIN}\n{DOCUMENT}").unwrap();
        let fresh = MockChatService::new();
        generate_qa(&docs, &other, &fresh, &config(3), &GenerationCache::open(&path).unwrap()).unwrap();
        assert_eq!(fresh.calls(), 5);
    }
}
