use std::net::Ipv4Addr;

use proptest::prelude::*;
use spamshield::message::EmailAddress;
use spamshield::source::{GreylistDecision, GreylistState, GreylistStore, RetryWindow};

const MIN: u64 = 10;
const MAX: u64 = 12 * 3600;

fn addr(local: &str) -> EmailAddress {
    EmailAddress::new(local, "example.org").unwrap()
}

fn triplet() -> impl Strategy<Value = (EmailAddress, EmailAddress, Ipv4Addr)> {
    ("[a-d]{1,3}", "[a-d]{1,3}", 0u8..4).prop_map(|(s, r, o)| (addr(&s), addr(&r), Ipv4Addr::new(192, 0, 2, o)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn first_contact_always_tempfails((s, r, ip) in triplet(), now in 0u64..1_000_000) {
        let mut g = GreylistStore::new();
        prop_assert_eq!(g.check(&s, &r, ip, now, RetryWindow::default()), GreylistDecision::TempFail);
        prop_assert_eq!(g.get(&s, &r, ip).unwrap().first_seen, now);
    }

    #[test]
    fn retry_outcome_depends_only_on_elapsed_time((s, r, ip) in triplet(), t0 in 0u64..1_000_000, d in 0u64..(2 * MAX)) {
        let mut g = GreylistStore::new();
        g.check(&s, &r, ip, t0, RetryWindow::default());
        let got = g.check(&s, &r, ip, t0 + d, RetryWindow::default());
        let expected = if (MIN..=MAX).contains(&d) { GreylistDecision::Accept } else { GreylistDecision::TempFail };
        prop_assert_eq!(got, expected);
        let e = g.get(&s, &r, ip).unwrap();
        if d > MAX {
            prop_assert_eq!(e.first_seen, t0 + d);
            prop_assert_eq!(e.state, GreylistState::Pending);
        } else if d < MIN {
            prop_assert_eq!(e.first_seen, t0);
        }
    }

    #[test]
    fn confirmed_is_absorbing((s, r, ip) in triplet(), t0 in 0u64..1_000, d in MIN..=MAX, later in proptest::collection::vec(0u64..10 * MAX, 1..20)) {
        let mut g = GreylistStore::new();
        g.check(&s, &r, ip, t0, RetryWindow::default());
        prop_assert_eq!(g.check(&s, &r, ip, t0 + d, RetryWindow::default()), GreylistDecision::Accept);
        let mut t = t0 + d;
        for step in later {
            t += step;
            prop_assert_eq!(g.check(&s, &r, ip, t, RetryWindow::default()), GreylistDecision::Accept);
            prop_assert_eq!(g.get(&s, &r, ip).unwrap().state, GreylistState::Confirmed);
        }
    }

    #[test]
    fn triplets_are_independent(a in triplet(), b in triplet(), t0 in 0u64..1_000) {
        prop_assume!(a != b);
        let mut g = GreylistStore::new();
        g.check(&a.0, &a.1, a.2, t0, RetryWindow::default());
        g.check(&a.0, &a.1, a.2, t0 + MIN, RetryWindow::default());
        prop_assert_eq!(g.check(&b.0, &b.1, b.2, t0 + MIN, RetryWindow::default()), GreylistDecision::TempFail);
    }

    #[test]
    fn snapshot_round_trips(ops in proptest::collection::vec((triplet(), 0u64..100_000), 0..30)) {
        let mut g = GreylistStore::new();
        let mut t = 0;
        for ((s, r, ip), dt) in ops {
            t += dt;
            g.check(&s, &r, ip, t, RetryWindow::default());
        }
        let back = GreylistStore::from_snapshot(&g.to_snapshot()).unwrap();
        prop_assert_eq!(back, g);
    }
}

#[test]
fn window_edges_are_inclusive() {
    let (s, r, ip) = (addr("a"), addr("b"), Ipv4Addr::new(192, 0, 2, 1));
    let w = RetryWindow::default();
    for (d, expected) in [
        (9, GreylistDecision::TempFail),
        (10, GreylistDecision::Accept),
        (43_200, GreylistDecision::Accept),
        (43_201, GreylistDecision::TempFail),
    ] {
        let mut g = GreylistStore::new();
        g.check(&s, &r, ip, 1_000, w);
        assert_eq!(g.check(&s, &r, ip, 1_000 + d, w), expected, "retry after {d}s");
    }
}
