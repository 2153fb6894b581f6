#![no_main]

use libfuzzer_sys::fuzz_target;
use scenesplat::io::{cameras_from_json, cameras_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cams) = cameras_from_json(text) else { return };
    let json = cameras_to_json(&cams);
    let back = cameras_from_json(&json).expect("written cameras parse");
    assert_eq!(cameras_to_json(&back), json);
});
