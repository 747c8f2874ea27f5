#![no_main]

use estsel::grid::GridEvaluation;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = GridEvaluation::read_csv(data) {
        let mut out = Vec::new();
        grid.write_csv(&mut out).unwrap();
        let again = GridEvaluation::read_csv(out.as_slice()).unwrap();
        assert_eq!(again.rows.len(), grid.rows.len());
    }
});
