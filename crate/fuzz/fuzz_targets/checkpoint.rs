#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // The checkpoint loader mixes a text header with a binary payload;
    // declared sizes must be validated before any allocation or slicing.
    let _ = dtikit::model::EstimatorModel::from_bytes(data);
});
