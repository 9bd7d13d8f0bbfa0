#![no_main]

use libfuzzer_sys::fuzz_target;
use readpack_core::corpus::Document;
use readpack_core::readcompre::{apply_rules, RuleSet};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Rules that compile must run without panicking.
    if let Ok(rules) = RuleSet::from_toml_str(text) {
        let doc = Document {
            id: "fuzz".into(),
            text: "Rain fell. Therefore, the river rose. It was cold! Why? Nobody knew.".into(),
            domain: "fuzz".into(),
            meta: None,
        };
        let _ = apply_rules(&doc, &rules);
    }
});
