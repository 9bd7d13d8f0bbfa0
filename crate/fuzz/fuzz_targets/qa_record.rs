#![no_main]

use libfuzzer_sys::fuzz_target;
use readpack_core::corpus::parse_qa_record;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(pair) = parse_qa_record(line) {
        let text = serde_json::to_string(&pair).unwrap();
        assert_eq!(parse_qa_record(&text).unwrap(), pair);
    }
});
