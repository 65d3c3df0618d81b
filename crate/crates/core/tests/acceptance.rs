//! Acceptance checks. One PASS/FAIL line per criterion; exits non-zero if
//! any criterion fails.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use pdsched::cost::{CostConfig, CostModel};
use pdsched::offline::mip::{row_counts, validate_solution, valuation_from_schedule, MipInstance};
use pdsched::offline::{
    assign_auto, assign_exact, branch_and_bound, lower_bound, lpt_schedule, makespan_of, BoundOptions, ExactOptions,
    ServiceMode,
};
use pdsched::online::{iteration_decision, DecodeCostScope, OnlineState, QueueOrder};
use pdsched::sim::{run, run_batch, validate_schedule, BatchConfig, Policy, PolicyConfig};
use pdsched::workload::{generate_trace, SamplerParams, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLIENTS: usize = 200;
const REQUESTS: usize = 1319;
const SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gsm8k(seed: u64) -> Trace {
    generate_trace(REQUESTS, seed, SamplerParams::GSM8K).expect("preset trace")
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn c1_cost_arithmetic() -> Outcome {
    let cfg = CostConfig::default();
    let cost = CostModel::from_config(&cfg).unwrap();
    let round = cost.decode_round_time(200).unwrap();
    let exact = CostModel::with_capacities(&cfg, &[5000]).unwrap();
    let prefill = exact.prefill_stage_time(5000).unwrap().duration_ms;
    outcome(
        (round - 71.0).abs() <= 1e-9 && (prefill - 675.0).abs() <= 1e-9,
        format!("decode_round_time(200) = {round} ms, exact-fit prefill(5000) = {prefill} ms"),
    )
}

fn c2_lower_bound() -> Outcome {
    let trace = gsm8k(SEED);
    let cost = CostModel::default();
    let t0 = Instant::now();
    let lb = lower_bound(&trace, CLIENTS, &cost, ServiceMode::Oracle, BoundOptions::default()).unwrap();
    let el = t0.elapsed();
    let total_s = lb.total / 1000.0;
    outcome(
        (153.0..=207.0).contains(&total_s) && within(el, Duration::from_secs(5)),
        format!(
            "lower bound {total_s:.2} s (prefill {:.2} s, decode {:.2} s, exact={}) in {el:.2?}",
            lb.prefill_part / 1000.0,
            lb.decode_part / 1000.0,
            lb.exact
        ),
    )
}

fn c3_policy_comparison() -> Outcome {
    let t0 = Instant::now();
    let trace = gsm8k(SEED);
    let cost = CostModel::default();
    let base = run(&trace, CLIENTS, &cost, &PolicyConfig::of(Policy::Baseline), None).unwrap();
    let (a, _) = assign_auto(&trace, CLIENTS, &cost, ServiceMode::Oracle, ExactOptions::default()).unwrap();
    let hyb = run(&trace, CLIENTS, &cost, &PolicyConfig::of(Policy::Hybrid), Some(&a)).unwrap();
    let lb = lower_bound(&trace, CLIENTS, &cost, ServiceMode::Oracle, BoundOptions::default()).unwrap();
    let el = t0.elapsed();
    let (bu, hu) = (base.metrics.utilization, hyb.metrics.utilization);
    let (bm, hm) = (base.metrics.makespan_s, hyb.metrics.makespan_s);
    let lb_s = lb.total / 1000.0;
    outcome(
        (0.75..=0.85).contains(&bu) && hu - bu >= 0.05 && hm < bm && hm >= lb_s && within(el, Duration::from_secs(30)),
        format!(
            "baseline util {bu:.4} makespan {bm:.2} s; hybrid util {hu:.4} (+{:.4}) makespan {hm:.2} s; bound {lb_s:.2} s; {el:.2?}",
            hu - bu
        ),
    )
}

fn c4_hundred_cases() -> Outcome {
    let t0 = Instant::now();
    let rep = run_batch(100, SEED, &BatchConfig::default()).unwrap();
    let el = t0.elapsed();
    let s = &rep.summary;
    outcome(
        s.hybrid_wins >= 95
            && s.utilization_delta_mean >= 0.05
            && s.speed_delta_mean > 0.0
            && within(el, Duration::from_secs(300)),
        format!(
            "hybrid wins {}/{}; mean util delta {:.4}; mean speed delta {:.2} tok/s; {el:.2?}",
            s.hybrid_wins, s.cases, s.utilization_delta_mean, s.speed_delta_mean
        ),
    )
}

/// Minimum makespan over every one of the `J^I` assignments.
fn brute_force(weights: &[u64], clients: usize) -> u64 {
    fn go(weights: &[u64], loads: &mut [u64], best: &mut u64) {
        let Some((&w, rest)) = weights.split_first() else {
            *best = (*best).min(*loads.iter().max().unwrap());
            return;
        };
        for j in 0..loads.len() {
            loads[j] += w;
            go(rest, loads, best);
            loads[j] -= w;
        }
    }
    let mut best = u64::MAX;
    go(weights, &mut vec![0; clients], &mut best);
    best
}

fn c5_exact_vs_brute_force() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = Vec::new();
    for case in 0..200 {
        let n = rng.random_range(1..=12usize);
        let j = rng.random_range(1..=4usize);
        let weights: Vec<u64> = (0..n).map(|_| rng.random_range(1..=600u64)).collect();
        let pairs: Vec<(u32, u32)> = weights.iter().map(|&w| (1, w as u32)).collect();
        let trace = Trace::from_tokens(&pairs).unwrap();
        let cost = CostModel::default();
        let ex = assign_exact(&trace, j, &cost, ServiceMode::Oracle, ExactOptions::default()).unwrap();
        let want = brute_force(&weights, j);
        if ex.assignment.token_makespan() != want || !ex.proven_optimal {
            mismatches.push(format!("case {case}: exact {} vs {want}", ex.assignment.token_makespan()));
        }
    }
    let el = t0.elapsed();
    outcome(
        mismatches.is_empty() && within(el, Duration::from_secs(60)),
        if mismatches.is_empty() {
            format!("200/200 instances match exhaustive search; {el:.2?}")
        } else {
            format!("{} mismatches, first: {}", mismatches.len(), mismatches[0])
        },
    )
}

fn c6_feasibility() -> Outcome {
    let t0 = Instant::now();
    let cost = CostModel::default();
    let mut failures = Vec::new();
    let mut runs = 0;
    for seed in 0..20u64 {
        let trace = gsm8k(1000 + seed);
        let (a, _) = assign_auto(&trace, CLIENTS, &cost, ServiceMode::Oracle, ExactOptions::default()).unwrap();
        for policy in Policy::ALL {
            runs += 1;
            let out = run(&trace, CLIENTS, &cost, &PolicyConfig::of(policy), Some(&a)).unwrap();
            let rep = validate_schedule(&out.schedule, &trace, CLIENTS, &cost).unwrap();
            let mut decoded = vec![0u64; trace.len()];
            for bin in &out.schedule.bins {
                for s in &bin.decode.shares {
                    decoded[s.request as usize] += s.tokens as u64;
                }
            }
            let conserved = trace.requests.iter().all(|r| decoded[r.id as usize] == r.output_tokens as u64);
            if !rep.is_feasible() || !conserved {
                failures.push(format!("{} seed {}: {:?} conserved={conserved}", policy.name(), 1000 + seed, rep.failures()));
            }
        }
    }
    let el = t0.elapsed();
    outcome(
        failures.is_empty() && within(el, Duration::from_secs(120)),
        if failures.is_empty() {
            format!("{runs}/{runs} runs feasible with exact token conservation; {el:.2?}")
        } else {
            format!("{} failing runs, first: {}", failures.len(), failures[0])
        },
    )
}

fn c7_lpt_hand_case() -> Outcome {
    let w = [5u64, 4, 3, 2, 2];
    let lpt = makespan_of(&w, &lpt_schedule(&w, 2), 2);
    let bnb = branch_and_bound(&w, 2, 1_000_000);
    let brute = brute_force(&w, 2);
    outcome(
        lpt == 9 && bnb.makespan == 8 && bnb.proven_optimal && brute == 8,
        format!("LPT {lpt}, exact {}, exhaustive {brute}", bnb.makespan),
    )
}

fn c8_decision_latency() -> Outcome {
    let trace = gsm8k(SEED);
    let cost = CostModel::default();
    let mut queues = vec![Vec::new(); CLIENTS];
    for r in &trace.requests {
        queues[r.id as usize % CLIENTS].push(r.id);
    }
    let inputs = trace.requests.iter().map(|r| r.input_tokens).collect();
    let est = trace.requests.iter().map(|r| r.est_output_tokens).collect();
    let mut state = OnlineState::new(queues, inputs, est, QueueOrder::LongestFirst, true).unwrap();
    // Half the clients decoding, the other half waiting for prefill.
    for j in 0..CLIENTS {
        state.dispatch(j).unwrap();
    }
    let batch: Vec<u32> = state.waiting_prefill()[..CLIENTS / 2].to_vec();
    state.start_prefill(&batch).unwrap();
    let decoding: Vec<usize> = state.active_decode().map(|(j, _, _)| j).collect();

    let mut worst = Duration::ZERO;
    let mut total = Duration::ZERO;
    let mut samples = 0u32;
    for &j in &decoding {
        let t0 = Instant::now();
        let d = iteration_decision(&state, &cost, DecodeCostScope::Active).unwrap();
        state.complete(j).unwrap();
        let next = state.next_request(j).unwrap();
        let el = t0.elapsed();
        std::hint::black_box((d, next));
        if let Some(n) = next {
            state.admit(n.request, j).unwrap();
        }
        worst = worst.max(el);
        total += el;
        samples += 1;
    }
    outcome(
        samples > 0 && worst < Duration::from_millis(5),
        format!("{samples} decisions, worst {worst:.2?}, mean {:.2?}", total / samples.max(1)),
    )
}

/// Row counts per family for `I` requests, `J` clients, `K` bins and `L`
/// levels, from the index sets of each constraint.
fn expected_rows(i: usize, j: usize, k: usize, _l: usize) -> Vec<(&'static str, usize)> {
    let pairs = k * (k - 1) / 2;
    vec![
        ("eq02", k),
        ("eq03", k - 1),
        ("eq04", k),
        ("eq05", k),
        ("eq06", k),
        ("eq07", k),
        ("eq08", j * k),
        ("eq09", i * j * k),
        ("eq10", i * j * pairs),
        ("eq11", i * j * pairs),
        ("eq12", j * k),
        ("eq13", i * j),
        ("eq14", i * j),
        ("eq15", i),
        ("eq16", j * k),
        ("eq17", i * j),
        ("eq18", i),
    ]
}

fn c9_mip_export() -> Outcome {
    let trace = Trace::from_tokens(&[(30, 3), (40, 2)]).unwrap();
    let cost = CostModel::from_config(&CostConfig { max_levels: 1, ..Default::default() }).unwrap();
    let out = run(&trace, 1, &cost, &PolicyConfig::of(Policy::Baseline), None).unwrap();
    let bins = out.schedule.bins.len();
    let inst = MipInstance::new(&trace, 1, bins, &cost).unwrap();
    let counts = row_counts(&inst);
    let want = expected_rows(2, 1, bins, 1);
    let mut bad = Vec::new();
    for (fam, n) in &want {
        let got = counts.get(*fam).copied().unwrap_or(0);
        if got != *n {
            bad.push(format!("{fam}: {got} != {n}"));
        }
    }
    if counts.len() != want.len() {
        bad.push(format!("{} families emitted, {} expected", counts.len(), want.len()));
    }
    let vals: HashMap<String, f64> = valuation_from_schedule(&out.schedule, &inst).unwrap();
    let rep = validate_solution(&vals, &inst).unwrap();
    let total: usize = counts.values().sum();
    outcome(
        bins == 2 && bad.is_empty() && rep.is_feasible(),
        format!(
            "K={bins}, {total} rows, count mismatches {:?}, simulator schedule violations {:?}",
            bad,
            rep.failures()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("cost arithmetic", c1_cost_arithmetic),
        ("lower bound band", c2_lower_bound),
        ("policy comparison", c3_policy_comparison),
        ("100-case study", c4_hundred_cases),
        ("exact solver vs exhaustive search", c5_exact_vs_brute_force),
        ("feasibility suite", c6_feasibility),
        ("LPT hand case", c7_lpt_hand_case),
        ("online decision latency", c8_decision_latency),
        ("MIP export", c9_mip_export),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, n + 1, o.detail);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
