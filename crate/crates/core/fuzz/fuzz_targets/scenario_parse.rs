#![no_main]

use libfuzzer_sys::fuzz_target;
use monostore::scenario::Scenario;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(sc) = Scenario::parse(text) {
        // keep runs short; parsing and validation are the target
        if sc.config.max_ticks <= 2_000 && sc.workload.items.len() <= 32 && sc.config.replicas <= 4 {
            let _ = sc.run();
        }
    }
});
