//! Acceptance report: one line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so the report reads top to
//! bottom. The process fails when any criterion disagrees with `EXPECTED_RED`,
//! in either direction: an unexpected failure is a regression, an unexpected
//! pass means the list is stale. `ACCEPTANCE_ONLY=1,4` restricts the run.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use packsim::experiment::{batch_map, RunSpec};
use packsim::pack::{CheckOutcome, SeqCheckerState};
use packsim::tcp::{SendCause, SenderEvent};
use packsim::{simulate, ProxyEvent, RunOptions, RunOutput, Scenario, SimTime, TraceMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria this simulator does not reproduce. The analysis behind each one
/// lives in the README under "Acceptance status".
const EXPECTED_RED: &[u32] = &[6, 7];

const SEEDS: u64 = 10;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

fn main() -> ExitCode {
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let checks: [(u32, &str, fn() -> Verdict); 9] = [
        (1, "checker matches brute-force oracle", checker_oracle),
        (2, "walkthrough stream 1,2,3,4,7,8,9,5", walkthrough),
        (3, "proxy placement on chains", proxy_placement),
        (4, "congestion-control laws on a lossless link", cc_laws),
        (5, "end-to-end reliability over 200 mobile runs", reliability),
        (6, "grid throughput direction", grid_direction),
        (7, "mobile overhead direction", overhead_direction),
        (8, "determinism", determinism),
        (9, "proxy ack retransmits earlier", pack_latency),
    ];
    let mut unexpected = Vec::new();
    for (id, name, check) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let v = check();
        let expected_pass = !EXPECTED_RED.contains(&id);
        let mark = if v.pass { "PASS" } else { "FAIL" };
        let note = match (v.pass, expected_pass) {
            (false, false) => " [known]",
            (true, false) => " [unexpected pass]",
            (false, true) => " [regression]",
            (true, true) => "",
        };
        println!(
            "criterion {id} {mark}{note} ({:.1}s) {name}: {}",
            t.elapsed().as_secs_f64(),
            v.detail
        );
        if v.pass != expected_pass {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected outcome for criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}

// ---- helpers ----

fn scenario(text: &str) -> Scenario {
    Scenario::from_toml(text).unwrap_or_else(|e| panic!("bad test scenario: {e}"))
}

/// A 1 x (hops + 1) chain with one flow from the first node to the last.
fn chain(hops: u32, duration_s: f64, extra: &str) -> Scenario {
    scenario(&format!(
        r#"
name = "chain{hops}"
seed = 1
duration_s = {duration_s}
routing = "part"
pack_enabled = true
[area]
area_w = 6000.0
area_h = 500.0
[nodes]
layout = "grid"
rows = 1
cols = {cols}
[[flows]]
src = 0
dst = {hops}
start_s = 1.0
{extra}
"#,
        cols = hops + 1
    ))
}

fn probed(sc: &Scenario) -> RunOutput {
    let out = simulate(
        sc,
        &RunOptions {
            trace: TraceMode::Off,
            probe: true,
        },
    )
    .expect("run");
    assert_eq!(out.audit, Ok(()), "audit of {}", sc.name);
    out
}

fn specs(base: &str, seeds: u64, variants: &[&str], arms: &[&[&str]], fixed: &[&str]) -> Vec<RunSpec> {
    let base = Scenario::load(base).expect("bundled scenario");
    let mut out = Vec::new();
    for v in variants {
        for arm in arms {
            for seed in 1..=seeds {
                let mut o: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
                o.extend(arm.iter().map(|s| s.to_string()));
                o.push(format!("variant={v}"));
                o.push(format!("seed={seed}"));
                out.push(RunSpec::new(&base, &o).expect("valid overrides"));
            }
        }
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of a difference of two independent sample means.
fn se_diff(a: &[f64], b: &[f64]) -> f64 {
    fn var(x: &[f64]) -> f64 {
        let m = mean(x);
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
    }
    (var(a) / a.len() as f64 + var(b) / b.len() as f64).sqrt()
}

const AODV: &[&str] = &["routing=aodv", "pack_enabled=false"];
const PACK: &[&str] = &["routing=part", "pack_enabled=true"];

/// Mean of `metric` per (variant, arm) over seeds.
fn paired(
    base: &str,
    variants: &[&str],
    fixed: &[&str],
    metric: fn(&packsim::Row) -> f64,
) -> BTreeMap<String, (Vec<f64>, Vec<f64>)> {
    let specs = specs(base, SEEDS, variants, &[AODV, PACK], fixed);
    let rows = batch_map(&specs, |s| packsim::run_one(s, &RunOptions::default()).map(|(r, _)| r));
    let mut out: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let row = row.expect("run succeeds");
        let e = out.entry(row.variant.clone()).or_default();
        if row.routing == "aodv" {
            e.0.push(metric(&row));
        } else {
            e.1.push(metric(&row));
        }
    }
    out
}

// ---- 1 ----

/// Gaps that open when `stream` is replayed, from set arithmetic alone: at each
/// arrival, the seqnos newly below the maximum seen that have not been seen.
fn oracle_gaps(stream: &[u32]) -> Vec<(u32, u32)> {
    let mut seen = BTreeSet::new();
    let mut max = 0;
    let mut gaps = Vec::new();
    for &s in stream {
        seen.insert(s);
        let new_max = max.max(s);
        let fresh: Vec<u32> = (max + 1..=new_max).filter(|x| !seen.contains(x)).collect();
        max = new_max;
        // Group into maximal runs of consecutive seqnos.
        let mut i = 0;
        while i < fresh.len() {
            let mut j = i;
            while j + 1 < fresh.len() && fresh[j + 1] == fresh[j] + 1 {
                j += 1;
            }
            gaps.push((fresh[i], (j - i + 1) as u32));
            i = j + 1;
        }
    }
    gaps
}

/// A stream that opens with seqno 1 at the proxy, then suffers drops,
/// local reordering and late retransmissions.
fn random_stream(rng: &mut ChaCha8Rng) -> Vec<u32> {
    let n = rng.gen_range(1..=500u32);
    let (p_drop, p_swap, p_rtx) = (rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.2));
    let mut s: Vec<u32> = (2..=n).filter(|_| !rng.gen_bool(p_drop)).collect();
    for i in 1..s.len() {
        if rng.gen_bool(p_swap) {
            s.swap(i - 1, i);
        }
    }
    let mut out = vec![1];
    for (i, &x) in s.iter().enumerate() {
        out.push(x);
        if i > 0 && rng.gen_bool(p_rtx) {
            let earlier = rng.gen_range(1..=x);
            out.push(earlier);
        }
    }
    out
}

fn checker_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let streams = 10_000;
    for k in 0..streams {
        let stream = random_stream(&mut rng);
        let mut st = SeqCheckerState::new(0);
        let got: Vec<(u32, u32)> = stream
            .iter()
            .filter_map(|&s| match st.check_sequence(s, 7, SimTime::ZERO) {
                CheckOutcome::Missing { first, count } => Some((first, count)),
                _ => None,
            })
            .collect();
        let want = oracle_gaps(&stream);
        let (mut a, mut b) = (got.clone(), want.clone());
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Verdict::new(false, format!("stream #{k} {stream:?}: checker {got:?} oracle {want:?}"));
        }
    }
    Verdict::new(true, format!("{streams} streams identical"))
}

// ---- 2 ----

fn walkthrough() -> Verdict {
    let mut st = SeqCheckerState::new(0);
    let mut outcomes = Vec::new();
    let mut exp = Vec::new();
    for s in [1, 2, 3, 4, 7, 8, 9, 5] {
        outcomes.push(st.check_sequence(s, 7, SimTime::ZERO));
        exp.push(st.exp_seqno);
    }
    use CheckOutcome::*;
    let want = [
        InOrder,
        InOrder,
        InOrder,
        InOrder,
        Missing { first: 5, count: 2 },
        InOrder,
        InOrder,
        RetransmissionSeen,
    ];
    let ok = outcomes == want && exp == [1, 2, 3, 4, 7, 8, 9, 9];
    Verdict::new(ok, format!("outcomes {outcomes:?}, exp_seqno {exp:?}"))
}

// ---- 3 ----

fn proxy_placement() -> Verdict {
    let mut seen = Vec::new();
    for hc in 1..=12u32 {
        let sc = chain(hc, 4.0, "");
        let out = probed(&sc);
        let probe = out.probe.expect("probe");
        let assigned: Vec<(u32, u32)> = probe
            .proxy
            .iter()
            .filter_map(|e| match e {
                ProxyEvent::Assigned {
                    node,
                    origin: 0,
                    dest,
                    hops_to_dest,
                    ..
                } if *dest == hc => Some((*node, *hops_to_dest)),
                _ => None,
            })
            .collect();
        if hc <= 3 {
            if !assigned.is_empty() {
                return Verdict::new(false, format!("hc={hc} assigned {assigned:?}"));
            }
            continue;
        }
        let want = hc.div_ceil(2);
        // On a chain, node k is exactly hc - k hops from the destination.
        let ok = !assigned.is_empty() && assigned.iter().all(|&(node, h)| h == want && hc - node == want);
        if !ok {
            return Verdict::new(false, format!("hc={hc} assigned {assigned:?}, want distance {want}"));
        }
        seen.push(format!("{hc}->{want}"));
    }
    Verdict::new(true, format!("none for hc 1-3; distance to dest {}", seen.join(" ")))
}

// ---- 4 ----

fn two_node(variant: &str, duration_s: f64, faults: &str) -> Scenario {
    scenario(&format!(
        r#"
name = "link"
duration_s = {duration_s}
variant = "{variant}"
[area]
area_w = 1000.0
area_h = 1000.0
[nodes]
layout = "grid"
rows = 1
cols = 2
[radio]
mac_retries = 50
ifq_len = 1000
[tcp]
rwnd_segments = 0
[[flows]]
src = 0
dst = 1
start_s = 1.0
{faults}
"#
    ))
}

/// cwnd after the last ack of each round. Acks carry the highest seqno
/// received in order. Round 0 is the first segment; a
/// segment sent in response to an ack for a round-r segment is in round r+1.
fn cwnd_per_round(out: &RunOutput) -> Vec<f64> {
    let probe = out.probe.as_ref().expect("probe");
    let mut round_of: BTreeMap<u32, usize> = BTreeMap::new();
    let mut acks: BTreeMap<SimTime, u32> = BTreeMap::new();
    let mut cwnd_at_ack: BTreeMap<u32, f64> = BTreeMap::new();
    for (t, _, e) in &probe.tcp {
        if let SenderEvent::Ack { ack_no, cwnd, .. } = e {
            acks.insert(*t, *ack_no);
            cwnd_at_ack.insert(*ack_no, *cwnd);
        }
    }
    for (t, _, tx) in &probe.sends {
        if tx.retransmission {
            continue;
        }
        let r = match acks.get(t) {
            Some(a) => round_of.get(a).map_or(0, |r| r + 1),
            None => 0,
        };
        round_of.insert(tx.seqno, r);
    }
    let rounds = round_of.values().max().copied().unwrap_or(0);
    (0..rounds)
        .filter_map(|r| {
            let last = round_of.iter().filter(|&(_, &k)| k == r).map(|(&s, _)| s).max()?;
            cwnd_at_ack.get(&last).copied()
        })
        .collect()
}

fn cc_laws() -> Verdict {
    let ssthresh = 65.0;
    let out = probed(&two_node("reno", 12.0, ""));
    let w = cwnd_per_round(&out);
    let mut notes = Vec::new();
    let cross = w.iter().position(|&c| c >= ssthresh).unwrap_or(w.len());
    if cross < 5 || cross + 5 > w.len() {
        return Verdict::new(false, format!("too few rounds around ssthresh: {w:?}"));
    }
    for r in 1..cross {
        if (w[r] - 2.0 * w[r - 1]).abs() > 1.0 {
            return Verdict::new(false, format!("round {r}: {} after {}", w[r], w[r - 1]));
        }
    }
    notes.push(format!("slow start {:?}", &w[..=cross]));
    for r in cross + 2..w.len() {
        let d = w[r] - w[r - 1];
        if (d - 1.0).abs() > 0.1 {
            return Verdict::new(false, format!("avoidance round {r}: +{d:.3}"));
        }
    }
    notes.push(format!("avoidance +1/round over {} rounds", w.len() - cross - 2));

    // Losses forced on a lossless link: one drop gives three dupacks, a
    // dropped retransmission of another segment then forces a timeout.
    let faults = r#"
[[faults]]
flow = 0
seqno = 200
at_node = 1
[[faults]]
flow = 0
seqno = 400
at_node = 1
[[faults]]
flow = 0
seqno = 400
transmission = 2
at_node = 1
"#;
    for v in ["tahoe", "reno", "newreno", "westwood", "vegas"] {
        let out = probed(&two_node(v, 12.0, faults));
        let probe = out.probe.expect("probe");
        let mut halved = None;
        let mut timeout = None;
        for (_, _, e) in &probe.tcp {
            match e {
                SenderEvent::LossReaction {
                    cause: SendCause::FastRetransmit,
                    cwnd_before,
                    cwnd_after,
                    ssthresh,
                } if halved.is_none() => halved = Some((*cwnd_before, *cwnd_after, *ssthresh)),
                SenderEvent::Timeout { cwnd_after, .. } if timeout.is_none() => timeout = Some(*cwnd_after),
                _ => {}
            }
        }
        if timeout != Some(1.0) {
            return Verdict::new(false, format!("{v}: timeout left cwnd at {timeout:?}"));
        }
        if matches!(v, "reno" | "newreno") {
            let Some((before, _, ss)) = halved else {
                return Verdict::new(false, format!("{v}: no fast retransmit"));
            };
            if (ss - before / 2.0).abs() > 1.0 {
                return Verdict::new(false, format!("{v}: ssthresh {ss} from cwnd {before}"));
            }
            notes.push(format!("{v} halves {before:.1}->{ss:.1}"));
        }
    }
    notes.push("timeout resets cwnd to 1 for all variants".into());
    Verdict::new(true, notes.join("; "))
}

// ---- 5 ----

fn reliability() -> Verdict {
    let variants = ["tahoe", "reno", "newreno", "vegas", "westwood"];
    let arms: [&[&str]; 2] = [PACK, AODV];
    let base = Scenario::load("mobile30").expect("bundled");
    let speeds = ["1", "10", "20"];
    let mut all = Vec::new();
    for v in variants {
        for arm in arms {
            for seed in 1..=20u64 {
                let mut o: Vec<String> = arm.iter().map(|s| s.to_string()).collect();
                o.push(format!("variant={v}"));
                o.push(format!("seed={seed}"));
                o.push(format!("speed={}", speeds[seed as usize % speeds.len()]));
                all.push(RunSpec::new(&base, &o).expect("valid"));
            }
        }
    }
    let opts = RunOptions {
        trace: TraceMode::Off,
        probe: true,
    };
    let results = batch_map(&all, |s| {
        let out = simulate(&s.scenario, &opts).map_err(|e| e.to_string())?;
        out.audit.clone()?;
        let probe = out.probe.expect("probe");
        let mut next: BTreeMap<u32, u32> = BTreeMap::new();
        for &(_, f, seq) in &probe.deliveries {
            let n = next.entry(f).or_insert(1);
            if seq != *n {
                return Err(format!("flow {f} delivered {seq}, expected {n}"));
            }
            *n += 1;
        }
        let sent: BTreeMap<u32, u32> = probe.sends.iter().fold(BTreeMap::new(), |mut m, &(_, f, tx)| {
            let e = m.entry(f).or_insert(0);
            *e = (*e).max(tx.seqno);
            m
        });
        for (f, n) in &next {
            if n - 1 > sent.get(f).copied().unwrap_or(0) {
                return Err(format!("flow {f} delivered beyond what was sent"));
            }
        }
        Ok(probe.deliveries.len())
    });
    let mut segments = 0;
    for (s, r) in all.iter().zip(results) {
        match r {
            Ok(n) => segments += n,
            Err(e) => return Verdict::new(false, format!("{}: {e}", s.overrides.join(";"))),
        }
    }
    Verdict::new(true, format!("{} runs, {segments} segments delivered exactly once in order", all.len()))
}

// ---- 6 ----

fn grid_direction() -> Verdict {
    let t = paired("grid7x7", &["tahoe", "newreno", "vegas", "westwood"], &[], |r| r.throughput_bps);
    let mut ok = true;
    let mut notes = Vec::new();
    for (v, (aodv, pack)) in &t {
        let (a, p) = (mean(aodv), mean(pack));
        let noise = 2.0 * se_diff(aodv, pack);
        let good = if v == "vegas" { p - a <= noise } else { p > a };
        ok &= good;
        notes.push(format!(
            "{v} {:+.1}% ({:.1} vs {:.1} kb/s, noise {:.1}){}",
            (p / a - 1.0) * 100.0,
            p / 1e3,
            a / 1e3,
            noise / 1e3,
            if good { "" } else { " wrong sign" }
        ));
    }
    Verdict::new(ok, notes.join("; "))
}

// ---- 7 ----

fn overhead_direction() -> Verdict {
    let variants = ["tahoe", "reno", "newreno", "vegas", "westwood"];
    let t = paired("mobile30", &variants, &["speed=20"], |r| r.overhead_pkts as f64);
    let mut ok = true;
    let mut notes = Vec::new();
    for (v, (aodv, pack)) in &t {
        let cut = 1.0 - mean(pack) / mean(aodv);
        let good = cut >= 0.30;
        ok &= good;
        notes.push(format!("{v} {:+.1}%{}", -cut * 100.0, if good { "" } else { " (need <= -30%)" }));
    }
    Verdict::new(ok, notes.join("; "))
}

// ---- 8 ----

fn determinism() -> Verdict {
    let dir = std::env::temp_dir().join(format!("packsim-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    let mut cases = 0;
    for name in ["grid7x7", "mobile30"] {
        for routing in [AODV, PACK] {
            for seed in [1u64, 7] {
                let mut sc = Scenario::load(name).expect("bundled");
                for o in routing {
                    sc.apply_override(o).expect("override");
                }
                sc.apply_override(&format!("seed={seed}")).expect("seed");
                sc.apply_override("duration_s=60").expect("duration");
                let paths: Vec<_> = (0..2).map(|k| dir.join(format!("{name}-{seed}-{k}.trace"))).collect();
                for p in &paths {
                    simulate(
                        &sc,
                        &RunOptions {
                            trace: TraceMode::File(p.clone()),
                            probe: false,
                        },
                    )
                    .expect("run");
                }
                let a = std::fs::read(&paths[0]).expect("trace");
                let b = std::fs::read(&paths[1]).expect("trace");
                if a != b || a.is_empty() {
                    return Verdict::new(false, format!("{name} seed {seed} {routing:?} traces differ"));
                }
                cases += 1;
            }
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    Verdict::new(true, format!("{cases} scenario/seed/protocol cases byte-identical"))
}

// ---- 9 ----

fn pack_latency() -> Verdict {
    let seq = 30;
    // Dropped on arrival at node 2: between the source and the proxy, which a
    // 6-hop chain places 3 hops from the destination (node 3).
    let fault = format!("[[faults]]\nflow = 0\nseqno = {seq}\nat_node = 2\n");
    let first_retx = |seed: u64, pack: bool| -> Option<(SimTime, SendCause)> {
        let mut sc = chain(6, 20.0, &fault);
        sc.seed = seed;
        sc.pack_enabled = pack;
        let out = probed(&sc);
        out.probe
            .expect("probe")
            .sends
            .iter()
            .find(|(_, _, tx)| tx.seqno == seq && tx.retransmission)
            .map(|&(t, _, tx)| (t, tx.cause))
    };
    let earlier = |seed| match (first_retx(seed, true), first_retx(seed, false)) {
        (Some((tp, SendCause::Pack)), Some((tn, _))) => tp < tn,
        _ => false,
    };
    // The gate is the seed-1 pair. Other seeds are reported, not gated: on a
    // chain, nodes three hops apart are hidden from each other, and a notice
    // lost to such a collision falls back to the dupack path.
    let wins = (1..=20).filter(|&s| earlier(s)).count();
    match (first_retx(1, true), first_retx(1, false)) {
        (Some((tp, cp)), Some((tn, cn))) => Verdict::new(
            cp == SendCause::Pack && tp < tn,
            format!("with proxy ack {tp} ({cp:?}), without {tn} ({cn:?}); earlier in {wins}/20 seeds"),
        ),
        other => Verdict::new(false, format!("missing retransmission: {other:?}")),
    }
}
