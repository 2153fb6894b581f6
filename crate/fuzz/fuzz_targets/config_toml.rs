#![no_main]

use libfuzzer_sys::fuzz_target;
use scenesplat::types::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = PipelineConfig::from_toml_str(text) else { return };
    let written = cfg.to_toml_string();
    let back = PipelineConfig::from_toml_str(&written).expect("written config parses");
    assert_eq!(back.to_toml_string(), written);
});
