#![no_main]

use libfuzzer_sys::fuzz_target;
use monostore::lattice::LatticeType;
use monostore::replication::{Payload, Replica};
use monostore::ReplicaId;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(payload) = Payload::decode(text) else {
        return;
    };
    let again = Payload::decode(&payload.to_canonical()).expect("canonical form decodes");
    assert_eq!(again, payload);

    // merging is idempotent whatever arrives
    let schema = [
        ("cart".to_owned(), LatticeType::TwoPSet),
        ("hits".to_owned(), LatticeType::GCounter),
    ]
    .into_iter()
    .collect();
    let mut r = Replica::new(ReplicaId(0), 3, &schema, false);
    if r.receive_gossip(&payload).is_ok() {
        let (store, vv) = (r.store().clone(), r.vv().clone());
        let _ = r.receive_gossip(&payload);
        assert_eq!(r.store(), &store);
        assert_eq!(r.vv(), &vv);
    }
});
