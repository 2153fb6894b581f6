#![no_main]

use libfuzzer_sys::fuzz_target;
use scenesplat::io::{decode_ply, encode_ply, PlyPrecision};

fuzz_target!(|data: &[u8]| {
    let Ok(scene) = decode_ply(data) else { return };
    // double precision holds every decoded value exactly
    let once = encode_ply(&scene, PlyPrecision::Double).expect("decoded scene encodes");
    let again = decode_ply(&once).expect("encoded scene decodes");
    assert_eq!(encode_ply(&again, PlyPrecision::Double).unwrap(), once);
});
