#![no_main]

use libfuzzer_sys::fuzz_target;
use readpack_core::corpus::parse_instruction_record;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        let _ = parse_instruction_record(line);
    }
});
