#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // First NUL splits the input into a bvals document and a bvecs
    // document; the parser must never panic on either.
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let (bvals, bvecs) = data.split_at(split);
    let bvecs = if bvecs.is_empty() { bvecs } else { &bvecs[1..] };
    if let (Ok(bvals), Ok(bvecs)) = (std::str::from_utf8(bvals), std::str::from_utf8(bvecs)) {
        let _ = dtikit::gradient::GradientTable::parse(bvals, bvecs);
    }
});
