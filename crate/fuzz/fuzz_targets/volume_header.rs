#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Header parsing must reject malformed input without panicking,
    // including dims that would overflow the element count.
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = dtikit::volume::VolumeHeader::parse(text);
    }
});
