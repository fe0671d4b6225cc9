#![no_main]

use epicg::CalibrationModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let Ok(model) = CalibrationModel::parse(text) else {
        return;
    };
    let again = CalibrationModel::parse(&model.to_text()).expect("serialized model parses");
    assert_eq!(model, again);
});
