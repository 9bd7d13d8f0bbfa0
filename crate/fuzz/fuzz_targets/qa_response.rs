#![no_main]

use libfuzzer_sys::fuzz_target;
use readpack_core::qagen::{canonical_serialize, parse_qa_response};

fuzz_target!(|raw: &str| {
    let Ok(parsed) = parse_qa_response(raw) else {
        return;
    };
    for p in &parsed.pairs {
        assert!(!p.question.trim().is_empty() && !p.answer.trim().is_empty());
    }
    // Canonical output must parse back to the same pairs with no repairs.
    let canon = canonical_serialize(&parsed.pairs);
    let again = parse_qa_response(&canon).expect("canonical form parses");
    assert_eq!(again.pairs, parsed.pairs);
    assert!(again.repairs.is_empty(), "{:?}", again.repairs);
});
