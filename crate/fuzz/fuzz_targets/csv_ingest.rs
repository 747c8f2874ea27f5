#![no_main]

use estsel::data::{read_csv, Schema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let mut schema = Schema::new("z", "y", &["a", "b", "g"]);
    schema.categorical = vec!["g".into()];
    if let Ok(ing) = read_csv(data, &schema) {
        assert_eq!(ing.dataset.n() + ing.rows_dropped, ing.rows_read);
    }
});
