use pdsched::cost::{CostConfig, CostModel};
use pdsched::offline::{assign_auto, assign_lpt, lower_bound, BoundOptions, ExactOptions, ServiceMode};
use pdsched::sim::{
    export_gantt, read_gantt_csv, run, segments_us, validate_schedule, GanttFormat, Policy, PolicyConfig, RunOutput,
};
use pdsched::workload::{generate_trace, SamplerParams, Trace};
use proptest::prelude::*;

fn small_params() -> SamplerParams {
    SamplerParams { input_mean: 300.0, input_std: 200.0, output_mean: 40.0, output_std: 30.0, output_cap: Some(80) }
}

fn run_policy(trace: &Trace, clients: usize, cost: &CostModel, policy: Policy) -> RunOutput {
    let a = assign_auto(trace, clients, cost, ServiceMode::Oracle, ExactOptions::default()).unwrap().0;
    run(trace, clients, cost, &PolicyConfig::of(policy), Some(&a)).unwrap()
}

#[test]
fn single_request_timeline() {
    let trace = Trace::from_tokens(&[(100, 10)]).unwrap();
    let cost = CostModel::default();
    let out = run(&trace, 1, &cost, &PolicyConfig::of(Policy::Baseline), None).unwrap();
    // One 512-token level, then ten single-client rounds.
    assert_eq!(out.schedule.bins.len(), 1);
    assert_eq!(out.schedule.makespan_us, 91_560 + 10 * 29_210);
    assert_eq!(out.metrics.utilization, 1.0);
}

#[test]
fn all_policies_feasible_and_above_bound() {
    let cost = CostModel::default();
    for seed in 0..6 {
        let trace = generate_trace(120, seed, small_params()).unwrap();
        for clients in [1, 3, 16] {
            let lb = lower_bound(&trace, clients, &cost, ServiceMode::Oracle, BoundOptions::default()).unwrap();
            for policy in Policy::ALL {
                let out = run_policy(&trace, clients, &cost, policy);
                let rep = validate_schedule(&out.schedule, &trace, clients, &cost).unwrap();
                assert!(rep.is_feasible(), "{} seed {seed} J={clients}:\n{rep}", policy.name());
                assert!(out.schedule.makespan_ms() >= lb.total, "{} below bound", policy.name());
                let decoded: u64 = out.schedule.bins.iter().flat_map(|b| &b.decode.shares).map(|s| s.tokens as u64).sum();
                assert_eq!(decoded, trace.total_output_tokens());
            }
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let cost = CostModel::default();
    let trace = generate_trace(300, 4, SamplerParams::GSM8K).unwrap();
    for policy in Policy::ALL {
        let a = run_policy(&trace, 20, &cost, policy);
        let b = run_policy(&trace, 20, &cost, policy);
        assert_eq!(serde_json::to_string(&a.schedule).unwrap(), serde_json::to_string(&b.schedule).unwrap());
        assert_eq!(serde_json::to_string(&a.metrics).unwrap(), serde_json::to_string(&b.metrics).unwrap());
        assert_eq!(a.events, b.events);
    }
}

#[test]
fn missing_assignment_is_rejected() {
    let trace = Trace::from_tokens(&[(1, 1)]).unwrap();
    let cost = CostModel::default();
    assert!(run(&trace, 1, &cost, &PolicyConfig::of(Policy::Hybrid), None).is_err());
    let a = assign_lpt(&trace, 2, &cost, ServiceMode::Oracle).unwrap();
    assert!(run(&trace, 1, &cost, &PolicyConfig::of(Policy::Offline), Some(&a)).is_err());
}

#[test]
fn oversized_input_is_rejected() {
    let trace = Trace::from_tokens(&[(9000, 1)]).unwrap();
    let err = run(&trace, 1, &CostModel::default(), &PolicyConfig::of(Policy::Baseline), None).unwrap_err();
    assert!(err.to_string().contains("9000"));
}

#[test]
fn validator_catches_broken_schedules() {
    let cost = CostModel::default();
    let trace = generate_trace(40, 2, small_params()).unwrap();
    let good = run_policy(&trace, 4, &cost, Policy::Hybrid).schedule;
    let check = |s: &pdsched::sim::Schedule| validate_schedule(s, &trace, 4, &cost).unwrap();
    assert!(check(&good).is_feasible());

    let mut s = good.clone();
    s.makespan_us -= 1;
    assert!(check(&s).failures().contains(&"eq02"));

    let mut s = good.clone();
    s.bins[1].prefill.start_us -= 1;
    assert!(check(&s).failures().contains(&"eq03"));

    let mut s = good.clone();
    s.bins[0].prefill.length_us += 1;
    assert!(check(&s).failures().contains(&"eq04"));

    let mut s = good.clone();
    s.bins[0].prefill.length_us -= 1;
    assert!(check(&s).failures().contains(&"eq05"));

    let mut s = good.clone();
    let m = s.bins[0].prefill.members.pop().unwrap();
    s.bins[1].prefill.members.push(m);
    assert!(!check(&s).is_feasible());

    let mut s = good.clone();
    let share = s.bins[0].decode.shares.iter_mut().find(|sh| sh.tokens > 1).unwrap();
    share.tokens -= 1;
    let rep = check(&s);
    assert!(rep.failures().contains(&"eq15"), "{rep}");

    let mut s = good.clone();
    s.bins[0].decode.shares[0].client = (s.bins[0].decode.shares[0].client + 1) % 4;
    assert!(!check(&s).is_feasible());
}

#[test]
fn prefill_over_level_capacity_is_caught() {
    let cfg = CostConfig { max_levels: 1, ..Default::default() };
    let cost = CostModel::from_config(&cfg).unwrap();
    let trace = Trace::from_tokens(&[(300, 2), (300, 2)]).unwrap();
    let mut s = run(&trace, 2, &cost, &PolicyConfig::of(Policy::Baseline), None).unwrap().schedule;
    assert_eq!(s.bins.len(), 2, "two 300-token prompts cannot share a 512-token level");
    let moved = s.bins.remove(1);
    s.bins[0].prefill.members.extend(moved.prefill.members);
    let rep = validate_schedule(&s, &trace, 2, &cost).unwrap();
    assert!(rep.failures().contains(&"eq06"));
}

#[test]
fn gantt_csv_round_trip_and_svg_is_xml() {
    let cost = CostModel::default();
    let trace = generate_trace(50, 9, small_params()).unwrap();
    let out = run_policy(&trace, 5, &cost, Policy::Online);
    let csv = export_gantt(&out.schedule, GanttFormat::Csv);
    let segs = read_gantt_csv(&csv).unwrap();
    let raw = segments_us(&out.schedule);
    assert_eq!(segs.len(), raw.len());
    for (seg, (client, kind, s, e, request)) in segs.iter().zip(raw) {
        assert_eq!((seg.client, seg.kind, seg.request), (client, kind, request));
        assert_eq!((seg.start_ms * 1000.0).round() as u64, s);
        assert_eq!((seg.end_ms * 1000.0).round() as u64, e);
    }
    let svg = export_gantt(&out.schedule, GanttFormat::Svg);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let bars = doc.descendants().filter(|n| n.has_tag_name("rect") && n.attribute("class").is_some()).count();
    assert_eq!(bars, raw_len(&out));
}

fn raw_len(out: &RunOutput) -> usize {
    out.schedule.bins.iter().map(|b| b.prefill.members.len() + b.decode.shares.len()).sum()
}

#[test]
fn one_bin_csv_rows() {
    let trace = Trace::from_tokens(&[(10, 3), (10, 1)]).unwrap();
    let out = run(&trace, 2, &CostModel::default(), &PolicyConfig::of(Policy::Baseline), None).unwrap();
    assert_eq!(out.schedule.bins.len(), 1);
    let csv = export_gantt(&out.schedule, GanttFormat::Csv);
    assert_eq!(csv.lines().count(), 1 + 2 + 2);
}

/// Mean utilization over many GSM8K-style cases orders baseline, offline
/// and hybrid.
#[test]
fn policy_ordering_over_cases() {
    let cost = CostModel::default();
    let mut sums = [0.0f64; 3];
    let cases = 100;
    for seed in 0..cases {
        let trace = generate_trace(1319, 500 + seed, SamplerParams::GSM8K).unwrap();
        for (k, policy) in [Policy::Baseline, Policy::Offline, Policy::Hybrid].into_iter().enumerate() {
            sums[k] += run_policy(&trace, 200, &cost, policy).metrics.utilization;
        }
    }
    let [b, o, h] = sums.map(|s| s / cases as f64);
    assert!(b <= o && o <= h, "baseline {b}, offline {o}, hybrid {h}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn random_instances_stay_feasible(
        pairs in prop::collection::vec((1u32..2000, 1u32..60), 1..40),
        clients in 1usize..6,
        policy in prop::sample::select(Policy::ALL.to_vec()),
        steal in any::<bool>(),
    ) {
        let trace = Trace::from_tokens(&pairs).unwrap();
        let cost = CostModel::default();
        let a = assign_lpt(&trace, clients, &cost, ServiceMode::Estimate).unwrap();
        let cfg = PolicyConfig { policy, steal, ..Default::default() };
        let out = run(&trace, clients, &cost, &cfg, Some(&a)).unwrap();
        let rep = validate_schedule(&out.schedule, &trace, clients, &cost).unwrap();
        prop_assert!(rep.is_feasible(), "{}", rep);
        let lb = lower_bound(&trace, clients, &cost, ServiceMode::Oracle, BoundOptions::default()).unwrap();
        prop_assert!(out.schedule.makespan_ms() >= lb.total);
        prop_assert!(out.metrics.utilization <= 1.0 + 1e-12);
    }
}
