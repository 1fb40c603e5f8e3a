#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    if let Ok(program) = clamp::parser::parse_program(src) {
        let printed = program.to_string();
        let back = clamp::parser::parse_program(&printed).expect("printed program parses");
        assert_eq!(back, program, "{printed}");
    }
    if let Ok(e) = clamp::parser::parse_expr(src) {
        let back = clamp::parser::parse_expr(&e.to_string()).expect("printed term parses");
        assert_eq!(back, e);
        assert_eq!(clamp::elaborate::erase(&clamp::elaborate::insert(&e)), e);
    }
});
