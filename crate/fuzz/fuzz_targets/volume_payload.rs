#![no_main]

use libfuzzer_sys::fuzz_target;

use dtikit::volume::{Volume3D, VolumeHeader};

fuzz_target!(|data: &[u8]| {
    if data.len() < 4 {
        return;
    }
    // First four bytes pick small dims; the rest is the raw payload.
    // Byte-count mismatches and non-finite payloads must error cleanly.
    let dims = [
        1 + (data[0] % 8) as usize,
        1 + (data[1] % 8) as usize,
        1 + (data[2] % 4) as usize,
        1 + (data[3] % 4) as usize,
    ];
    let header = VolumeHeader {
        dims,
        voxel_size: [1.0, 1.0, 1.0],
        dtype: "f32le".to_string(),
        channel_names: (0..dims[3]).map(|c| format!("c{c}")).collect(),
    };
    let _ = Volume3D::from_header_and_payload(&header, &data[4..]);
});
