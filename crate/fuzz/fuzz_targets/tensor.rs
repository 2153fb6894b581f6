#![no_main]

use libfuzzer_sys::fuzz_target;
use scenesplat::io::{decode_tensor, encode_tensor, DType};

fuzz_target!(|data: &[u8]| {
    let Ok(t) = decode_tensor(data) else { return };
    let back = decode_tensor(&encode_tensor(&t, DType::F64)).expect("encoded tensor decodes");
    assert_eq!(back.dims, t.dims);
    assert!(back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()));
});
