use spamshield::message::EmailAddress;
use spamshield::pipeline::Stage;
use spamshield::sim::{run, HostState, Scenario, ServerStatus, Simulation, UserModel};

fn undefended() -> Scenario {
    Scenario::undefended()
}

#[test]
fn undefended_server_goes_down_within_a_day() {
    let t = run(undefended()).unwrap();
    let outage = t.summary.time_to_outage.expect("server should go down");
    assert!(outage < 1440, "outage at minute {outage}");
    assert!(t.summary.total_infections > 0);
    assert!(t.rows.iter().all(|r| r.conserves()));
}

#[test]
fn defended_server_stays_up_with_no_infections() {
    let t = run(Scenario::defended()).unwrap();
    assert_eq!(t.summary.total_infections, 0);
    assert!(t.rows.iter().all(|r| r.status == ServerStatus::Up));
    assert_eq!(t.summary.spam_delivered, 0);
    assert!(t.rows.iter().all(|r| r.conserves()));
    let seed_row = &t.rows[60];
    assert_eq!(seed_row.rejected_dnsbl, 20);
}

#[test]
fn identical_seeds_give_identical_csv() {
    let a = run(undefended()).unwrap().to_csv();
    let b = run(undefended()).unwrap().to_csv();
    assert_eq!(a, b);
    let mut other = undefended();
    other.run.seed = 2;
    assert_ne!(run(other).unwrap().to_csv(), a);
}

#[test]
fn educated_users_are_infected_less_often() {
    for seed in 0..20 {
        let mut naive = undefended();
        naive.run.seed = seed;
        naive.run.duration = 90;
        naive.users = UserModel::NAIVE;
        let mut educated = naive.clone();
        educated.users = UserModel::EDUCATED;
        let n = run(naive).unwrap().summary.total_infections;
        let e = run(educated).unwrap().summary.total_infections;
        assert!(e < n, "seed {seed}: educated {e} vs naive {n}");
    }
}

#[test]
fn zero_execution_probability_never_infects() {
    let mut s = undefended();
    s.users.execution_probability = 0.0;
    s.run.duration = 240;
    assert_eq!(run(s).unwrap().summary.total_infections, 0);
}

#[test]
fn quarantining_the_only_infected_host_stops_worm_traffic() {
    let mut s = undefended();
    s.users.execution_probability = 0.0;
    s.users.forward_probability = 0.0;
    s.run.background_per_user_per_day = 0.0;
    s.run.seed_spam_at = None;
    let mut sim = Simulation::new(s).unwrap();
    let owner = sim.directory().individuals()[3].clone();
    sim.infect_host(&owner);
    for _ in 0..5 {
        sim.step();
    }
    sim.quarantine_host(&owner);
    assert_eq!(sim.step().arrivals, 0);
    let host = sim.rejoin_host(&owner).unwrap();
    assert_eq!(host.state, HostState::Clean);
    assert_eq!(host.infected_at, None);
    let clean: EmailAddress = sim.directory().individuals()[4].clone();
    assert_eq!(sim.quarantine_host(&clean).unwrap().state, HostState::Quarantined);
}

#[test]
fn mid_attack_rename_stops_group_spam_and_keeps_legit_group_mail() {
    let mut s = undefended();
    s.users.execution_probability = 0.1;
    s.server.capacity_per_minute = 100_000;
    s.server.outage_threshold = u64::MAX;
    s.run.duration = 120;
    let mut sim = Simulation::new(s).unwrap();
    while sim.minute() < 70 {
        sim.step();
    }
    assert!(sim.timeline().rows[65].worm_group_deliveries > 0);
    let report = sim.rename_group_ids();
    let new_allstaff = report.remap[0].1.clone();
    assert_eq!(new_allstaff.local(), "all_staff");
    sim.send_internal(0, &[new_allstaff], "staff meeting");
    let row = sim.step().clone();
    assert_eq!(row.worm_group_deliveries, 0);
    assert!(row.rejected_recipient > 0);
    assert_eq!(row.legit_group_deliveries, 1);
    while !sim.is_finished() {
        assert_eq!(sim.step().worm_group_deliveries, 0);
    }
}

#[test]
fn extra_stages_never_let_more_spam_through() {
    let base = {
        let mut s = undefended();
        s.run.duration = 180;
        s
    };
    let open = run(base.clone()).unwrap().summary.spam_delivered;
    for stage in Stage::DEFAULT_ORDER {
        let mut s = base.clone();
        s.pipeline = spamshield::sim::full_defense("abc.com");
        s.pipeline.stage_order = vec![stage];
        let t = run(s).unwrap();
        assert!(t.summary.spam_delivered <= open, "{stage}");
    }
}
