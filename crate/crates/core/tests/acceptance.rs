//! Acceptance criteria 1 to 7. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

mod common;

use std::net::Ipv4Addr;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{expected_delivered, Layers};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spamshield::bayes::{score_message, token_probability, BayesConfig, Label, TokenTable};
use spamshield::corpus::{CorpusSpec, Workspace};
use spamshield::experiment::{run_experiment, Experiment};
use spamshield::message::{EmailAddress, EmailMessage};
use spamshield::pipeline::{Disposition, Pipeline, Stage};
use spamshield::sim::{full_defense, run, Scenario, ServerStatus, Simulation};
use spamshield::source::{CountingProvider, FixtureProvider, GreylistDecision, GreylistStore, RetryWindow, DEFAULT_DNSBL_ZONES};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn workspace(spec: &CorpusSpec) -> (tempfile::TempDir, Workspace) {
    let tmp = tempfile::tempdir().expect("temp dir");
    spec.generate().write_to(tmp.path()).expect("corpus written");
    let ws = Workspace::load(tmp.path()).expect("corpus read back");
    (tmp, ws)
}

fn bayes_example() -> Outcome {
    let mut t = TokenTable::with_totals(3000, 300);
    t.set_counts("viagra", 400, 5);
    let p = token_probability("viagra", &t, &BayesConfig::default()).expect("trained table");
    outcome((p - 0.8889).abs() <= 1e-4, format!("p(viagra) = {p:.6}, target 0.8889 +/- 1e-4"))
}

fn dnsbl_ablation() -> Outcome {
    let (cmp, took) = timed(|| {
        let spec = CorpusSpec::dnsbl();
        let (_tmp, ws) = workspace(&spec);
        let all = Layers { zones: &DEFAULT_DNSBL_ZONES, surbl: true, other_filters: true };
        let ablated = Layers { zones: &DEFAULT_DNSBL_ZONES[1..], surbl: true, other_filters: true };
        let oracle = (expected_delivered(&spec, &all), expected_delivered(&spec, &ablated));
        (run_experiment(Experiment::DnsblAblation, &ws), oracle, spec)
    });
    let (cmp, (ob, ov), spec) = cmp;
    let zone1_only: usize = spec.classes.iter().filter(|c| c.zones == [DEFAULT_DNSBL_ZONES[0]]).map(|c| c.count).sum();
    let zones23: usize = spec
        .classes
        .iter()
        .filter(|c| c.zones.iter().any(|z| z != DEFAULT_DNSBL_ZONES[0]))
        .map(|c| c.count)
        .sum();
    let construction = zone1_only * 100 == 45 * spec.spam_total() && zones23 * 100 == 35 * spec.spam_total();
    let oracle_change = (ov as f64 - ob as f64) / ob as f64;
    let change = cmp.relative_change().unwrap_or(f64::NAN);
    let matches = cmp.baseline_spam_delivered() == ob && cmp.variant_spam_delivered() == ov;
    let pass = construction && matches && (0.40..=0.50).contains(&oracle_change) && (0.40..=0.50).contains(&change) && took < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "delivered spam {} -> {} (+{:.1}%), oracle +{:.1}%, zone1-only {zone1_only}, zones 2-3 {zones23}, {:.2}s",
            cmp.baseline_spam_delivered(),
            cmp.variant_spam_delivered(),
            change * 100.0,
            oracle_change * 100.0,
            took.as_secs_f64()
        ),
    )
}

fn defense_on_off() -> Outcome {
    let ((cmp, oracle), took) = timed(|| {
        let spec = CorpusSpec::mixed();
        let (_tmp, ws) = workspace(&spec);
        let on = Layers { zones: &DEFAULT_DNSBL_ZONES, surbl: true, other_filters: true };
        let oracle = 1.0 - expected_delivered(&spec, &on) as f64 / spec.spam_total() as f64;
        (run_experiment(Experiment::DefenseOnOff, &ws), oracle)
    });
    let reduction = -cmp.relative_change().unwrap_or(f64::NAN);
    let pass = (0.50..=0.60).contains(&reduction) && (reduction - oracle).abs() < 1e-12 && took < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "spam delivered {} -> {}, reduction {:.1}% (oracle {:.1}%), {:.2}s",
            cmp.baseline_spam_delivered(),
            cmp.variant_spam_delivered(),
            reduction * 100.0,
            oracle * 100.0,
            took.as_secs_f64()
        ),
    )
}

fn false_negatives() -> Outcome {
    let (cmp, took) = timed(|| {
        let (_tmp, ws) = workspace(&CorpusSpec::dnsbl());
        run_experiment(Experiment::DnsblAblation, &ws)
    });
    let fn_ = cmp.variant_fn;
    let pass = (2.0..=3.0).contains(&fn_.mean) && took < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "ablated config over {:.0} days: mean {:.3} false negatives per user per day (std dev {:.3}), {:.2}s",
            cmp.days,
            fn_.mean,
            fn_.std_dev,
            took.as_secs_f64()
        ),
    )
}

fn attack_outcome() -> Outcome {
    let (und, t_und) = timed(|| run(Scenario::undefended()).expect("valid scenario"));
    let (def, t_def) = timed(|| run(Scenario::defended()).expect("valid scenario"));
    let outage = und.summary.time_to_outage;
    let down_in_a_day = outage.is_some_and(|m| m < 1440);
    let defended_ok = def.summary.total_infections == 0 && def.rows.iter().all(|r| r.status == ServerStatus::Up);
    let fast = t_und < Duration::from_secs(30) && t_def < Duration::from_secs(30);
    outcome(
        down_in_a_day && defended_ok && fast,
        format!(
            "undefended: outage at minute {}, {} infections ({:.2}s); defended: {} infections, always up = {} ({:.2}s)",
            outage.map_or("none".into(), |m| m.to_string()),
            und.summary.total_infections,
            t_und.as_secs_f64(),
            def.summary.total_infections,
            def.rows.iter().all(|r| r.status == ServerStatus::Up),
            t_def.as_secs_f64()
        ),
    )
}

fn mitigation() -> Outcome {
    let mut s = Scenario::undefended();
    s.server.capacity_per_minute = 100_000;
    s.server.outage_threshold = u64::MAX;
    s.users.execution_probability = 0.1;
    s.run.duration = 120;
    let mut sim = Simulation::new(s).expect("valid scenario");
    while sim.minute() < 75 {
        sim.step();
    }
    let before: u64 = sim.timeline().rows[61..].iter().map(|r| r.worm_group_deliveries).sum();
    let report = sim.rename_group_ids();
    let renamed: Vec<EmailAddress> = report.remap.iter().map(|(_, new)| new.clone()).collect();
    sim.send_internal(1, &renamed[..1], "after the rename");
    let next = sim.step().clone();
    let mut after = next.worm_group_deliveries;
    while !sim.is_finished() {
        after += sim.step().worm_group_deliveries;
    }
    let pass = before > 0 && next.worm_group_deliveries == 0 && after == 0 && next.legit_group_deliveries == 1 && next.rejected_recipient > 0;
    outcome(
        pass,
        format!(
            "worm group deliveries before rename {before}, after {after}; legit mail to {} delivered {} time(s); bounced {} at next tick",
            renamed[0], next.legit_group_deliveries, next.rejected_recipient
        ),
    )
}

fn greylist_suite() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = RetryWindow::default();
    let s: EmailAddress = "a@x.example".parse().unwrap();
    let r: EmailAddress = "b@abc.com".parse().unwrap();
    let ip = Ipv4Addr::new(192, 0, 2, 1);
    for _ in 0..2000 {
        let t0 = rng.random_range(0..1_000_000u64);
        for (d, expected) in [
            (9, GreylistDecision::TempFail),
            (10, GreylistDecision::Accept),
            (43_200, GreylistDecision::Accept),
            (43_201, GreylistDecision::TempFail),
        ] {
            let mut g = GreylistStore::new();
            if g.check(&s, &r, ip, t0, w) != GreylistDecision::TempFail || g.check(&s, &r, ip, t0 + d, w) != expected {
                return false;
            }
            if expected == GreylistDecision::Accept {
                let mut t = t0 + d;
                for _ in 0..10 {
                    t += rng.random_range(0..200_000u64);
                    if g.check(&s, &r, ip, t, w) != GreylistDecision::Accept {
                        return false;
                    }
                }
            }
        }
    }
    true
}

fn short_circuit_suite() -> bool {
    let listed = Ipv4Addr::new(203, 0, 113, 66);
    let mut fx = FixtureProvider::new();
    fx.list_ip("sbl.spamhaus.org", listed).list_domain("ws.surbl.org", "bad.example");
    let msg = EmailMessage::builder(&"admin@abc.com".parse().unwrap())
        .to(&"u@abc.com".parse().unwrap())
        .subject("status")
        .received("evil.example", listed)
        .attachment("Update_KB2546_x86.BAK.exe", 150_000)
        .body("http://bad.example/serv.exe\n")
        .build()
        .unwrap();
    for mask in 0u32..256 {
        let mut cfg = full_defense("abc.com");
        cfg.stage_order = Stage::DEFAULT_ORDER.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, s)| *s).collect();
        let counting = CountingProvider::new(&fx);
        let mut p = Pipeline::new(cfg.clone());
        let (v, _) = p.process("m", &msg.connection_context(), &msg, &counting);
        if v.disposition == Disposition::Accept {
            continue;
        }
        let later = &cfg.stage_order[cfg.stage_order.iter().position(|s| *s == v.stage).unwrap() + 1..];
        let leaked = (later.contains(&Stage::Dnsbl) && counting.dnsbl_queries() > 0)
            || (later.contains(&Stage::Rdns) && counting.ptr_queries() > 0)
            || (later.contains(&Stage::Spf) && counting.spf_queries() > 0)
            || (later.contains(&Stage::Surbl) && counting.surbl_queries() > 0);
        if leaked {
            return false;
        }
    }
    true
}

fn conservation_suite() -> bool {
    (0..6).all(|seed| {
        let mut s = Scenario::undefended();
        s.run.seed = seed;
        s.run.duration = 240;
        s.directory.users = 60;
        s.directory.groups = 6;
        s.server.capacity_per_minute = 20;
        s.server.outage_threshold = 400;
        if seed % 2 == 1 {
            s.pipeline = full_defense("abc.com");
        }
        run(s).expect("valid scenario").rows.iter().all(|r| r.conserves())
    })
}

fn bayes_suite() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vocab = ["cheap", "pills", "meeting", "invoice", "offer", "agenda", "prize", "report", "lunch", "winner"];
    let text = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.random_range(1..8);
        (0..n).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
    };
    let msg = |body: String| {
        EmailMessage::builder(&"a@x.example".parse().unwrap())
            .to(&"b@abc.com".parse().unwrap())
            .subject("note")
            .body(&body)
            .build()
            .unwrap()
    };
    let cfg = BayesConfig::default();
    let mut table = TokenTable::new();
    table.learn(&msg(text(&mut rng)), Label::Spam);
    table.learn(&msg(text(&mut rng)), Label::Ham);
    for _ in 0..500 {
        let m = msg(text(&mut rng));
        let before = score_message(&m, &table, &cfg);
        let label = if rng.random_bool(0.5) { Label::Spam } else { Label::Ham };
        table.learn(&m, label);
        let after = score_message(&m, &table, &cfg);
        let monotone = match label {
            Label::Spam => after >= before - 1e-12,
            Label::Ham => after <= before + 1e-12,
        };
        if !monotone {
            return false;
        }
    }
    true
}

fn determinism_suite() -> bool {
    let mut s = Scenario::undefended();
    s.run.duration = 360;
    let a = run(s.clone()).expect("valid scenario").to_csv();
    let b = run(s).expect("valid scenario").to_csv();
    a == b
}

fn property_suites() -> Outcome {
    let suites: [(&str, fn() -> bool); 5] = [
        ("greylist", greylist_suite),
        ("short-circuit", short_circuit_suite),
        ("conservation", conservation_suite),
        ("bayes-monotone", bayes_suite),
        ("determinism", determinism_suite),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, suite) in suites {
        let (ok, took) = timed(suite);
        let ok = ok && took < Duration::from_secs(5);
        pass &= ok;
        parts.push(format!("{name} {} {:.2}s", if ok { "ok" } else { "FAILED" }, took.as_secs_f64()));
    }
    outcome(pass, parts.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("Bayes worked example", bayes_example),
        ("DNSBL ablation", dnsbl_ablation),
        ("defense on/off", defense_on_off),
        ("false negatives per user per day", false_negatives),
        ("attack outcome pair", attack_outcome),
        ("mitigation efficacy", mitigation),
        ("property suites", property_suites),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failures += 1;
        }
        println!("criterion {} {name}: {} ({})", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}
