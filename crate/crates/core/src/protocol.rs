//! The K-batch query protocol, traces, and the accounting done on them.
//!
//! Each round the algorithm proposes `K` points; the oracle draws one seed
//! `z` and answers every point with the same `z`. Seeds come from a
//! counter-based stream keyed by `(run_seed, round)`, so a run is a pure
//! function of the algorithm, the instance and `run_seed`.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chain::{progress, progress_computed, ZERO_TOL};
use crate::error::{Error, Result};
use crate::oracles::{OracleResponse, Seed, StochasticOracle};
use crate::transforms::{soft_project, Instance, RotationMatrix};

/// What an algorithm wants next.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Query(Vec<Vec<f64>>),
    /// Active variant: the algorithm also picks the round's seed.
    QueryWithSeed(Vec<Vec<f64>>, Seed),
    Stop,
}

pub trait Algorithm {
    fn batch_size(&self) -> usize;
    fn reset(&mut self, dim: usize, seed: u64);
    fn propose(&mut self) -> Step;
    fn observe(&mut self, responses: &[OracleResponse]);
}

/// Derives independent 64-bit keys from a run seed.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const ALGORITHM_SALT: u64 = 0xa1;

/// Counter-based seed source: round `t` always gets the same generator.
#[derive(Debug, Clone, Copy)]
pub struct SeedStream {
    key: u64,
}

impl SeedStream {
    pub fn new(run_seed: u64) -> Self {
        SeedStream { key: run_seed }
    }

    pub fn round_rng(&self, round: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(round);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub points: Vec<Vec<f64>>,
    pub seed: Seed,
    pub responses: Vec<OracleResponse>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub rounds: Vec<Round>,
    pub run_seed: u64,
    pub algorithm_seed: u64,
    /// Canonical instance spec, empty for bare oracles.
    pub manifest: String,
}

/// Whether to keep going after a round has been observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Halt,
}

/// Drives one run, handing every completed round (1-based index) to
/// `on_round` instead of storing it. Returns the number of rounds played.
pub fn run_with<A, F>(
    algorithm: &mut A,
    oracle: &dyn StochasticOracle,
    max_rounds: u64,
    run_seed: u64,
    mut on_round: F,
) -> Result<u64>
where
    A: Algorithm + ?Sized,
    F: FnMut(u64, &Round) -> Control,
{
    let k = algorithm.batch_size();
    if k == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let d = oracle.dim();
    algorithm.reset(d, derive_seed(run_seed, ALGORITHM_SALT));
    let stream = SeedStream::new(run_seed);
    let dist = oracle.seed_distribution();
    let mut played = 0;
    for t in 1..=max_rounds {
        let (points, seed) = match algorithm.propose() {
            Step::Stop => break,
            Step::Query(points) => {
                let seed = dist.sample(&mut stream.round_rng(t));
                (points, seed)
            }
            Step::QueryWithSeed(points, seed) => (points, seed),
        };
        if points.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: points.len() });
        }
        let mut responses = Vec::with_capacity(k);
        for x in &points {
            if x.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: x.len() });
            }
            responses.push(oracle.respond(x, &seed)?);
        }
        algorithm.observe(&responses);
        played = t;
        let round = Round { points, seed, responses };
        if on_round(t, &round) == Control::Halt {
            break;
        }
    }
    Ok(played)
}

/// Runs to completion (or `max_rounds`) and records the full trace.
pub fn run<A: Algorithm + ?Sized>(
    algorithm: &mut A,
    oracle: &dyn StochasticOracle,
    max_rounds: u64,
    run_seed: u64,
) -> Result<Trace> {
    let mut rounds = Vec::new();
    run_with(algorithm, oracle, max_rounds, run_seed, |_, r| {
        rounds.push(r.clone());
        Control::Continue
    })?;
    Ok(Trace { rounds, run_seed, algorithm_seed: derive_seed(run_seed, ALGORITHM_SALT), manifest: String::new() })
}

/// [`run`] against a built instance; checks the batch size and records the
/// instance spec in the trace.
pub fn run_instance<A: Algorithm + ?Sized>(
    algorithm: &mut A,
    instance: &Instance,
    max_rounds: u64,
    run_seed: u64,
) -> Result<Trace> {
    if algorithm.batch_size() != instance.spec.k {
        return Err(Error::DimensionMismatch { expected: instance.spec.k, got: algorithm.batch_size() });
    }
    let mut trace = run(algorithm, instance.oracle.as_ref(), max_rounds, run_seed)?;
    trace.manifest = instance.spec.to_canonical_string();
    Ok(trace)
}

/// A query coordinate that no earlier response had revealed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub round: usize,
    pub slot: usize,
    /// 1-based coordinate.
    pub coord: usize,
}

/// Checks that every query is supported on coordinates revealed by earlier
/// responses. Rounds and slots are 1-based.
pub fn zero_respecting_audit(trace: &Trace) -> Vec<Violation> {
    let mut revealed: HashSet<usize> = HashSet::new();
    let mut out = Vec::new();
    for (t, round) in trace.rounds.iter().enumerate() {
        for (k, x) in round.points.iter().enumerate() {
            for (i, v) in x.iter().enumerate() {
                if v.abs() > ZERO_TOL && !revealed.contains(&i) {
                    out.push(Violation { round: t + 1, slot: k + 1, coord: i + 1 });
                }
            }
        }
        for r in &round.responses {
            revealed.extend(r.gradient.iter().enumerate().filter(|(_, g)| g.abs() > ZERO_TOL).map(|(i, _)| i));
        }
    }
    out
}

/// First round whose slot-1 point has `|grad F| <= eps`.
pub fn stationarity_time(trace: &Trace, oracle: &dyn StochasticOracle, eps: f64) -> Result<Option<usize>> {
    for (t, round) in trace.rounds.iter().enumerate() {
        if let Some(x) = round.points.first() {
            if grad_norm(oracle, x)? <= eps {
                return Ok(Some(t + 1));
            }
        }
    }
    Ok(None)
}

pub fn grad_norm(oracle: &dyn StochasticOracle, x: &[f64]) -> Result<f64> {
    Ok(oracle.gradient(x)?.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// How query points are mapped to chain coordinates for progress counting.
#[derive(Debug, Clone, Copy)]
pub enum ProgressMap<'a> {
    /// `prog_0(x)`.
    Identity,
    /// `prog_{1/4}(U^T rho(x / lambda))`.
    Rotated { rotation: &'a RotationMatrix, radius: f64, lambda: f64 },
}

impl ProgressMap<'_> {
    pub fn for_instance(instance: &Instance) -> ProgressMap<'_> {
        match (&instance.rotation, instance.radius, &instance.scale) {
            (Some(u), Some(radius), Some(sp)) => ProgressMap::Rotated { rotation: u, radius, lambda: sp.lambda },
            _ => ProgressMap::Identity,
        }
    }

    pub fn progress_of(&self, x: &[f64]) -> Result<usize> {
        match *self {
            ProgressMap::Identity => Ok(progress_computed(x)),
            ProgressMap::Rotated { rotation, radius, lambda } => {
                if x.len() != rotation.d() {
                    return Err(Error::DimensionMismatch { expected: rotation.d(), got: x.len() });
                }
                let unscaled: Vec<f64> = x.iter().map(|v| v / lambda).collect();
                let rho = soft_project(&unscaled, radius)?.rho;
                Ok(progress(&rotation.project(&rho), 0.25))
            }
        }
    }
}

/// Running maximum, per round, of the progress of all queries so far.
pub fn progress_curve(trace: &Trace, map: ProgressMap<'_>) -> Result<Vec<usize>> {
    let mut best = 0;
    let mut out = Vec::with_capacity(trace.rounds.len());
    for round in &trace.rounds {
        for x in &round.points {
            best = best.max(map.progress_of(x)?);
        }
        out.push(best);
    }
    Ok(out)
}

/// Running maximum of `prog_0` over the returned gradients.
pub fn response_progress_curve(trace: &Trace) -> Vec<usize> {
    let mut best = 0;
    trace
        .rounds
        .iter()
        .map(|round| {
            for r in &round.responses {
                best = best.max(progress_computed(&r.gradient));
            }
            best
        })
        .collect()
}

// ------------------------------------------------------------ text format

const TRACE_HEADER: &str = "# zerochain-trace v1";

fn hex_vec(out: &mut String, v: &[f64]) {
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{:016x}", x.to_bits());
    }
}

fn hex_vecs(out: &mut String, vs: &[Vec<f64>]) {
    for (i, v) in vs.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        hex_vec(out, v);
    }
}

fn seed_token(seed: &Seed) -> String {
    match seed {
        Seed::Bit(b) => format!("b{}", u8::from(*b)),
        Seed::Bits(bits) => {
            let mut s = String::with_capacity(bits.len() + 1);
            s.push('v');
            s.extend(bits.iter().map(|b| if *b { '1' } else { '0' }));
            s
        }
        Seed::Index(k) => format!("k{k}"),
        Seed::Real(z) => format!("n{:016x}", z.to_bits()),
    }
}

fn parse_seed(tok: &str, line: usize) -> Result<Seed> {
    let bad = || Error::TraceFormat { line, msg: format!("bad seed token {tok:?}") };
    let (tag, body) = tok.split_at_checked(1).ok_or_else(bad)?;
    match tag {
        "b" => match body {
            "0" => Ok(Seed::Bit(false)),
            "1" => Ok(Seed::Bit(true)),
            _ => Err(bad()),
        },
        "v" => body
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(bad()),
            })
            .collect::<Result<Vec<_>>>()
            .map(Seed::Bits),
        "k" => body.parse().map(Seed::Index).map_err(|_| bad()),
        "n" => u64::from_str_radix(body, 16).map(|b| Seed::Real(f64::from_bits(b))).map_err(|_| bad()),
        _ => Err(bad()),
    }
}

fn parse_vec(s: &str, line: usize) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|h| {
            u64::from_str_radix(h, 16)
                .map(f64::from_bits)
                .map_err(|_| Error::TraceFormat { line, msg: format!("bad float {h:?}") })
        })
        .collect()
}

fn parse_vecs(s: &str, line: usize) -> Result<Vec<Vec<f64>>> {
    s.split(';').map(|v| parse_vec(v, line)).collect()
}

impl Trace {
    /// Line-oriented text encoding; every float is stored as the hex of its
    /// IEEE-754 bits so the round trip is exact.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(TRACE_HEADER);
        out.push('\n');
        let _ = writeln!(out, "S\t{}\t{}", self.run_seed, self.algorithm_seed);
        let _ = writeln!(out, "M\t{}", serde_json::to_string(&self.manifest).expect("strings serialize"));
        for (t, r) in self.rounds.iter().enumerate() {
            let _ = write!(out, "R\t{}\t{}\t", t + 1, r.points.len());
            hex_vecs(&mut out, &r.points);
            let _ = write!(out, "\t{}\t", seed_token(&r.seed));
            let grads: Vec<Vec<f64>> = r.responses.iter().map(|x| x.gradient.clone()).collect();
            hex_vecs(&mut out, &grads);
            out.push('\t');
            let values: Vec<f64> = r.responses.iter().map(|x| x.value).collect();
            hex_vec(&mut out, &values);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Trace> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, TRACE_HEADER)) => {}
            _ => return Err(Error::TraceFormat { line: 1, msg: "missing header".into() }),
        }
        let mut trace = Trace { rounds: Vec::new(), run_seed: 0, algorithm_seed: 0, manifest: String::new() };
        for (i, line) in lines {
            let n = i + 1;
            let err = |msg: &str| Error::TraceFormat { line: n, msg: msg.to_string() };
            let fields: Vec<&str> = line.split('\t').collect();
            match fields[0] {
                "S" if fields.len() == 3 => {
                    trace.run_seed = fields[1].parse().map_err(|_| err("bad run seed"))?;
                    trace.algorithm_seed = fields[2].parse().map_err(|_| err("bad algorithm seed"))?;
                }
                "M" if fields.len() == 2 => {
                    trace.manifest = serde_json::from_str(fields[1]).map_err(|_| err("bad manifest"))?;
                }
                "R" if fields.len() == 7 => {
                    let t: usize = fields[1].parse().map_err(|_| err("bad round index"))?;
                    if t != trace.rounds.len() + 1 {
                        return Err(err("round indices must be consecutive"));
                    }
                    let k: usize = fields[2].parse().map_err(|_| err("bad batch size"))?;
                    let points = parse_vecs(fields[3], n)?;
                    let seed = parse_seed(fields[4], n)?;
                    let grads = parse_vecs(fields[5], n)?;
                    let values = parse_vec(fields[6], n)?;
                    if points.len() != k || grads.len() != k || values.len() != k {
                        return Err(err("batch size does not match payload"));
                    }
                    let responses =
                        grads.into_iter().zip(values).map(|(gradient, value)| OracleResponse { value, gradient }).collect();
                    trace.rounds.push(Round { points, seed, responses });
                }
                "" => {}
                _ => return Err(err("unrecognized record")),
            }
        }
        Ok(trace)
    }
}
