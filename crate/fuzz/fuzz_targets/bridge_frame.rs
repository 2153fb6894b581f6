#![no_main]

use libfuzzer_sys::fuzz_target;
use scenesplat::bridge::{decode_frame, encode_frame, FrameBuffer, Scan};

fuzz_target!(|data: &[u8]| {
    if let Ok((frame, used)) = decode_frame(data) {
        assert_eq!(encode_frame(&frame), &data[..used]);
    }
    // the stream reader must make progress on any input
    let mut buffer = FrameBuffer::new();
    buffer.extend(data);
    for _ in 0..=data.len() {
        if buffer.scan() == Scan::NeedMore {
            return;
        }
    }
    panic!("frame buffer did not settle");
});
