#![no_main]

use libfuzzer_sys::fuzz_target;
use readpack_core::cluster::embed::parse_embedding_response;

fuzz_target!(|data: &[u8]| {
    let Some((&n, body)) = data.split_first() else {
        return;
    };
    if let Ok(value) = serde_json::from_slice::<serde_json::Value>(body) {
        if let Ok(vectors) = parse_embedding_response(&value, n as usize) {
            assert_eq!(vectors.len(), n as usize);
        }
    }
});
