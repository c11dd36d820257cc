#![no_main]

use libfuzzer_sys::fuzz_target;
use shadowcast::imaging::FrameMetadata;

fuzz_target!(|data: &[u8]| {
    let _ = FrameMetadata::from_json(data);
});
