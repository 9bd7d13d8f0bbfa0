#![no_main]

use libfuzzer_sys::fuzz_target;
use readpack_core::loraplan::{plan, ModelGeometry};

fuzz_target!(|data: &[u8]| {
    let Some((&rank, body)) = data.split_first() else {
        return;
    };
    let Ok(geom) = serde_json::from_slice::<ModelGeometry>(body) else {
        return;
    };
    if geom.validate().is_err() {
        return;
    }
    if let Ok(targets) = geom.parse_targets("all-linear") {
        let _ = plan(&geom, rank as usize, &targets);
    }
});
