#![no_main]

use libfuzzer_sys::fuzz_target;
use shadowcast::imaging::pgm::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(image) = decode(data) {
        let again = decode(&encode(&image)).expect("re-encoded image decodes");
        assert_eq!(again, image);
    }
});
