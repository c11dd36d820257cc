#![no_main]

use libfuzzer_sys::fuzz_target;
use shadowcast_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = RunConfig::from_text(text) {
        let again = RunConfig::from_text(&config.to_flat()).expect("flat form parses");
        assert_eq!(again, config);
    }
});
