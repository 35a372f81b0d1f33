use pyo3::prelude::*;
use pyo3::types::PyDict;

#[test]
fn module_round_trip() {
    use mpft::mpft as module;
    pyo3::append_to_inittab!(module);
    Python::initialize();
    Python::attach(|py| {
        let m = py.import("mpft").unwrap();
        let locals = PyDict::new(py);
        locals.set_item("mpft", m).unwrap();
        py.run(
            c"
img = [[[((x * 7 + y * 3) % 11) / 11 for x in range(8)] for y in range(8)]] * 3
cfg = mpft.MaskConfig('tam', 'low', 2, (0.25, 0.25))
mask = mpft.generate_mask(img, cfg, 1)
assert mask.masked_patch_indices == sorted(mpft.rank_patches(img, 2)[-4:])
assert abs(mpft.average_precision([0.9, 0.8, 0.7], [1, 0, 1]) - 5 / 6) < 1e-12
try:
    mpft.MaskConfig('tam', 'sideways', 2)
    raise AssertionError('accepted an unknown variant')
except ValueError:
    pass
",
            None,
            Some(&locals),
        )
        .unwrap();
    });
}
