#![no_main]

use libfuzzer_sys::fuzz_target;
use monostore::checker::{check_trace, AnomalyOptions};
use monostore::trace::Trace;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(trace) = Trace::parse(text) else {
        return;
    };
    let reparsed = Trace::parse(&trace.to_jsonl()).expect("serialized trace parses");
    assert_eq!(reparsed.to_jsonl(), trace.to_jsonl());
    let opts = AnomalyOptions {
        bound: 6,
        horizon: None,
    };
    let _ = check_trace(&trace, opts);
});
