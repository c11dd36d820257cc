#![no_main]

use libfuzzer_sys::fuzz_target;
use shadowcast::curvefit::ScanSeries;

fuzz_target!(|data: &[u8]| {
    if let Ok(series) = ScanSeries::read_csv(data) {
        let mut out = Vec::new();
        series.write_csv(&mut out).expect("parsed series writes");
        let again = ScanSeries::read_csv(out.as_slice()).expect("written series parses");
        assert_eq!(again.points().len(), series.points().len());
    }
});
