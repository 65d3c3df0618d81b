//! Checks a simulated schedule against the constraint families of the
//! bin-level MIP (labels `eq02`..`eq18`), working directly on the schedule
//! structure.

use crate::cost::{ms_to_us, CostModel};
use crate::feasibility::FeasibilityReport;
use crate::workload::Trace;

use super::schedule::Schedule;
use super::SimError;

/// What the schedule says about one request.
#[derive(Debug, Default, Clone)]
struct Footprint {
    /// `(bin position, client)` of every prefill membership.
    prefills: Vec<(usize, usize)>,
    /// `(bin position, client, tokens)` of every decode share.
    shares: Vec<(usize, usize, u32)>,
}

pub fn validate_schedule(
    schedule: &Schedule,
    trace: &Trace,
    clients: usize,
    cost: &CostModel,
) -> Result<FeasibilityReport, SimError> {
    if schedule.clients != clients {
        return Err(SimError::ScheduleMismatch(format!(
            "schedule has {} clients, expected {clients}",
            schedule.clients
        )));
    }
    let n = trace.len();
    let mut foot = vec![Footprint::default(); n];
    for (pos, bin) in schedule.bins.iter().enumerate() {
        for m in &bin.prefill.members {
            let f = foot.get_mut(m.request as usize).ok_or_else(|| unknown(m.request))?;
            f.prefills.push((pos, m.client));
        }
        for s in &bin.decode.shares {
            let f = foot.get_mut(s.request as usize).ok_or_else(|| unknown(s.request))?;
            f.shares.push((pos, s.client, s.tokens));
        }
    }

    let mut rep = FeasibilityReport::default();
    let bins = &schedule.bins;

    // eq02: makespan covers every decode end, and is attained.
    let last_end = bins.iter().map(|b| b.decode.end_us().max(b.prefill.end_us())).max().unwrap_or(0);
    for b in bins {
        rep.check("eq02", schedule.makespan_us >= b.decode.end_us(), || {
            format!("bin {} decode ends at {} after makespan {}", b.index, b.decode.end_us(), schedule.makespan_us)
        });
    }
    rep.check("eq02", schedule.makespan_us == last_end, || {
        format!("makespan {} differs from last stage end {last_end}", schedule.makespan_us)
    });

    for (pos, b) in bins.iter().enumerate() {
        rep.check("bin_index", b.index == pos + 1, || format!("bin at position {pos} has index {}", b.index));
        // eq03: next prefill after the previous decode.
        if pos > 0 {
            let prev = &bins[pos - 1];
            rep.check("eq03", b.prefill.start_us >= prev.decode.end_us(), || {
                format!("bin {} prefill starts {} before bin {} decode ends {}", b.index, b.prefill.start_us, prev.index, prev.decode.end_us())
            });
        }
        // eq04: decode after the prefill of the same bin.
        rep.check("eq04", b.decode.start_us >= b.prefill.end_us(), || {
            format!("bin {} decode starts {} before prefill ends {}", b.index, b.decode.start_us, b.prefill.end_us())
        });
        // eq07: exactly one level, taken from the table.
        let level = cost.levels.entries().iter().find(|l| l.index == b.prefill.level);
        rep.check("eq07", level.is_some(), || format!("bin {} uses unknown level {}", b.index, b.prefill.level));
        if let Some(level) = level {
            // eq05: stage at least as long as its level.
            rep.check("eq05", b.prefill.length_us >= ms_to_us(level.duration_ms), || {
                format!("bin {} prefill {} us shorter than level {} ({} ms)", b.index, b.prefill.length_us, level.index, level.duration_ms)
            });
            // eq06: members fit the level capacity.
            let tokens: u64 = b
                .prefill
                .members
                .iter()
                .filter_map(|m| trace.requests.get(m.request as usize))
                .map(|r| r.input_tokens as u64)
                .sum();
            rep.check("eq06", tokens <= level.capacity, || {
                format!("bin {} prefills {tokens} tokens over capacity {}", b.index, level.capacity)
            });
        }
        // eq08: decode length covers every client's decoded tokens, and the
        // recorded rounds are priced by the cost model.
        let d = &b.decode;
        rep.check("eq08", d.round_lengths_us.iter().sum::<u64>() == d.length_us, || {
            format!("bin {} decode rounds do not add up to its length", b.index)
        });
        for s in &d.shares {
            let need = cost.decode_rate * s.tokens as f64 * 1000.0;
            rep.check("eq08", d.length_us as f64 + 1e-6 >= need && s.tokens as usize <= d.rounds(), || {
                format!("bin {} client {} decodes {} tokens in {} us", b.index, s.client, s.tokens, d.length_us)
            });
        }
        for (r, &len) in d.round_lengths_us.iter().enumerate() {
            let active = d.shares.iter().filter(|s| s.tokens as usize > r).count();
            let expect = if active == 0 { None } else { cost.decode_round_us(active).ok() };
            rep.check("eq08", expect == Some(len), || {
                format!("bin {} round {} lasts {len} us with {active} active clients", b.index, r + 1)
            });
        }
        // eq12 / eq16: one request per client per stage.
        let mut seen_p = vec![false; clients];
        for m in &b.prefill.members {
            let ok = m.client < clients && !std::mem::replace(&mut seen_p[m.client.min(clients - 1)], true);
            rep.check("eq16", ok, || format!("client {} prefills twice in bin {}", m.client, b.index));
        }
        let mut seen_d = vec![false; clients];
        for s in &d.shares {
            let ok = s.client < clients && !std::mem::replace(&mut seen_d[s.client.min(clients - 1)], true);
            rep.check("eq12", ok, || format!("client {} decodes twice in bin {}", s.client, b.index));
        }
    }

    // Occupancy intervals per client, for eq12 across bins.
    let mut occupancy: Vec<Vec<(usize, usize, u32)>> = vec![Vec::new(); clients];

    for (id, f) in foot.iter().enumerate() {
        let req = &trace.requests[id];
        let id = id as u32;
        // eq17: exactly one prefill.
        rep.check("eq17", f.prefills.len() == 1, || format!("request {id} prefilled {} times", f.prefills.len()));
        let Some(&(pbin, pclient)) = f.prefills.first() else { continue };
        // eq18 / eq14: one client carries every stage of the request.
        let same = f.shares.iter().all(|&(_, c, _)| c == pclient);
        rep.check("eq18", same, || format!("request {id} moves between clients"));
        let on_client: u32 = f.shares.iter().filter(|&&(_, c, _)| c == pclient).map(|s| s.2).sum();
        rep.check("eq14", on_client == req.output_tokens, || {
            format!("request {id} decodes {on_client}/{} tokens on its client", req.output_tokens)
        });
        // eq15: fractions over all clients and bins sum to one.
        let total: u32 = f.shares.iter().map(|s| s.2).sum();
        rep.check("eq15", total == req.output_tokens, || {
            format!("request {id} decodes {total}/{} tokens", req.output_tokens)
        });
        // eq11: nothing decoded before the prefill.
        let early = f.shares.iter().find(|&&(b, _, _)| b < pbin);
        rep.check("eq11", early.is_none(), || format!("request {id} decodes in bin {} before its prefill bin {}", early.unwrap().0 + 1, pbin + 1));
        // eq09 / eq10: decoding starts in the prefill bin and runs through
        // consecutive bins, using every round until the last share.
        let last = f.shares.iter().map(|s| s.0).max().unwrap_or(pbin);
        for (pos, b) in bins.iter().enumerate().take(last + 1).skip(pbin) {
            let share = f.shares.iter().find(|s| s.0 == pos).map(|s| s.2).unwrap_or(0);
            let is_last = pos == last;
            let full = share as usize == b.decode.rounds();
            if pos == pbin {
                rep.check("eq09", b.decode.rounds() == 0 || share > 0, || {
                    format!("request {id} idles in the decode stage of its prefill bin {}", b.index)
                });
            }
            rep.check("eq10", full || (is_last && share > 0), || {
                format!("request {id} decode interrupted in bin {} ({share}/{} rounds)", b.index, b.decode.rounds())
            });
        }
        if pclient < clients {
            occupancy[pclient].push((pbin, last, id));
        }
    }
    rep.check("eq13", true, String::new);

    for (j, spans) in occupancy.iter_mut().enumerate() {
        spans.sort_unstable();
        for w in spans.windows(2) {
            rep.check("eq12", w[0].1 < w[1].0, || {
                format!("client {j} holds requests {} and {} in bin {}", w[0].2, w[1].2, w[1].0 + 1)
            });
        }
    }
    Ok(rep)
}

fn unknown(id: u32) -> SimError {
    SimError::ScheduleMismatch(format!("schedule references unknown request {id}"))
}
