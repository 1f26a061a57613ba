//! Each conformance check runs against the in-process broker and against a
//! TCP client talking to a local server.

mod common;

use common::conformance;

macro_rules! conformance {
    ($($name:ident),* $(,)?) => {
        mod in_process {
            use crate::common::conformance as c;
            $( #[test] fn $name() { let (b, _s) = c::memory(); c::$name(&*b); } )*
            #[test] fn concurrent_exactly_once() { let (b, _s) = c::memory(); c::concurrent_exactly_once(b); }
        }
        mod over_tcp {
            use crate::common::conformance as c;
            $( #[test] fn $name() { let (b, _s) = c::tcp(); c::$name(&*b); } )*
            #[test] fn concurrent_exactly_once() { let (b, _s) = c::tcp(); c::concurrent_exactly_once(b); }
        }
    };
}

conformance!(
    request_round_trip_and_order,
    result_round_trip_and_order,
    unknown_topic_rejected,
    empty_consume_times_out,
    multi_topic_exactly_once,
    kv_semantics,
    empty_topic_set_rejected,
);

#[test]
fn locators_differ_by_backend() {
    let (m, _) = conformance::memory();
    assert_eq!(m.locator(), "in-process");
    let (t, s) = conformance::tcp();
    assert_eq!(t.locator(), format!("tcp://{}", s.unwrap().local_addr()));
}
