#![no_main]

use libfuzzer_sys::fuzz_target;
use monostore::dsl::{classify, infer_schema, parse};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(ast) = parse(text) else {
        return;
    };
    // printing and reparsing is the identity
    let printed = ast.to_string();
    let again = parse(&printed).expect("printed query reparses");
    assert_eq!(again, ast);
    assert_eq!(classify(&again), classify(&ast));
    let _ = infer_schema(&ast);
});
