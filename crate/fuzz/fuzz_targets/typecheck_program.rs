#![no_main]

use clamp::eval::{RunOptions, Runtime};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    let Ok(program) = clamp::parser::parse_program(src) else { return };
    let Ok(checked) = clamp::infer::check_program(&program) else { return };
    if checked.scheme("main").is_some_and(|s| s.is_mono()) {
        let opts = RunOptions { step_limit: 10_000, ..RunOptions::default() };
        let _ = Runtime::from_program(&checked).run_entry("main", opts, true);
    }
});
