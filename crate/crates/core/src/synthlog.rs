//! Synthetic repair-shop event logs from a Markov process over activity
//! states with log-normal delays, plus analytic and Monte Carlo ground truth.
//!
//! The default process unrolls the repair/test rework loop into explicit
//! states so the number of rework rounds is capped, which keeps the variant
//! count small while allowing a long tail of case lengths.

use std::collections::HashSet;

use chrono::{DateTime, Datelike, Duration, TimeZone, Utc, Weekday};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::eventlog::{Case, Event, EventLog, Schema};

/// Where a transition leads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    State(usize),
    End,
}

/// Log-normal delay, in seconds, before a state's event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delay {
    pub mu: f64,
    pub sigma: f64,
}

impl Delay {
    /// Parameters with the given mean (seconds) and log-scale `sigma`.
    pub fn with_mean(mean_seconds: f64, sigma: f64) -> Self {
        Self {
            mu: mean_seconds.ln() - 0.5 * sigma * sigma,
            sigma,
        }
    }

    pub fn mean(&self) -> f64 {
        (self.mu + 0.5 * self.sigma * self.sigma).exp()
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return self.mu.exp();
        }
        LogNormal::new(self.mu, self.sigma).expect("validated sigma").sample(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    pub activity: String,
    pub delay: Delay,
    pub next: Vec<(Target, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub states: Vec<StateSpec>,
    /// Distribution of the first state; its delay is not used.
    pub start: Vec<(usize, f64)>,
    pub n_cases: usize,
    pub seed: u64,
    pub start_time: DateTime<Utc>,
    /// Mean gap between case arrivals, seconds.
    pub inter_arrival: f64,
    /// Moves events that land on a weekend to the following Monday.
    #[serde(default)]
    pub business_calendar: bool,
}

const HOUR: f64 = 3600.0;
const DEFAULT_SIGMA: f64 = 1.0;
/// Probability of another repair round after the first and second test.
pub const DEFAULT_REWORK: f64 = 0.63;
const SIMPLE_REPAIR: f64 = 0.55;

fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 6, 8, 0, 0).single().expect("valid date")
}

impl ProcessSpec {
    /// register, inspect, then up to three repair/test rounds (simple or
    /// complex repair), inform and close. After the first and second test
    /// another round follows with probability `rework`.
    pub fn repair_with_rework(rework: f64, n_cases: usize, seed: u64) -> Self {
        let d = |hours: f64| Delay::with_mean(hours * HOUR, DEFAULT_SIGMA);
        let st = |a: &str, delay: Delay, next: Vec<(Target, f64)>| StateSpec {
            activity: a.to_string(),
            delay,
            next,
        };
        use Target::{End, State};
        let repairs = |simple: usize| vec![(State(simple), SIMPLE_REPAIR), (State(simple + 1), 1.0 - SIMPLE_REPAIR)];
        let after_test = |next_round: usize| {
            if rework > 0.0 {
                vec![
                    (State(next_round), rework * SIMPLE_REPAIR),
                    (State(next_round + 1), rework * (1.0 - SIMPLE_REPAIR)),
                    (State(11), 1.0 - rework),
                ]
            } else {
                vec![(State(11), 1.0)]
            }
        };
        let states = vec![
            // The first event has no delay; the value is unused.
            st("register", d(1.0), vec![(State(1), 1.0)]),
            st("inspect", d(2.7), repairs(2)),
            st("repair_simple", d(8.1), vec![(State(4), 1.0)]),
            st("repair_complex", d(18.9), vec![(State(4), 1.0)]),
            st("test", d(4.05), after_test(5)),
            st("repair_simple", d(8.1), vec![(State(7), 1.0)]),
            st("repair_complex", d(18.9), vec![(State(7), 1.0)]),
            st("test", d(4.05), after_test(8)),
            st("repair_simple", d(8.1), vec![(State(10), 1.0)]),
            st("repair_complex", d(18.9), vec![(State(10), 1.0)]),
            st("test", d(4.05), vec![(State(11), 1.0)]),
            st("inform", d(5.4), vec![(State(12), 1.0)]),
            st("close", d(10.8), vec![(End, 1.0)]),
        ];
        Self {
            states,
            start: vec![(0, 1.0)],
            n_cases,
            seed,
            start_time: default_start(),
            inter_arrival: 4.0 * HOUR,
            business_calendar: false,
        }
    }

    /// Default repair process with `n_cases` cases.
    pub fn repair(n_cases: usize, seed: u64) -> Self {
        Self::repair_with_rework(DEFAULT_REWORK, n_cases, seed)
    }

    /// A deterministic chain through `labels`, each delay with mean `mean_seconds`.
    pub fn chain(labels: &[&str], mean_seconds: f64, sigma: f64, n_cases: usize, seed: u64) -> Self {
        let n = labels.len();
        let states = labels
            .iter()
            .enumerate()
            .map(|(i, a)| StateSpec {
                activity: a.to_string(),
                delay: Delay::with_mean(mean_seconds, sigma),
                next: vec![(if i + 1 < n { Target::State(i + 1) } else { Target::End }, 1.0)],
            })
            .collect();
        Self {
            states,
            start: vec![(0, 1.0)],
            n_cases,
            seed,
            start_time: default_start(),
            inter_arrival: 4.0 * HOUR,
            business_calendar: false,
        }
    }

    /// Two deterministic paths that share their middle activities, chosen
    /// with equal probability at the start. Every prefix determines its
    /// suffix, so a model can memorize the log exactly.
    pub fn two_path_fixture(n_cases: usize, seed: u64) -> Self {
        use Target::{End, State};
        let d = Delay::with_mean(6.0 * HOUR, 0.5);
        let st = |a: &str, next: Target| StateSpec {
            activity: a.to_string(),
            delay: d,
            next: vec![(next, 1.0)],
        };
        let states = vec![
            st("register_a", State(1)),
            st("inspect", State(2)),
            st("repair_simple", State(3)),
            st("test", State(4)),
            st("inform", State(5)),
            st("close", End),
            st("register_b", State(7)),
            st("inspect", State(8)),
            st("repair_complex", State(9)),
            st("test", State(10)),
            st("repair_complex", State(11)),
            st("test", State(12)),
            st("inform", State(13)),
            st("close", End),
        ];
        Self {
            states,
            start: vec![(0, 0.5), (6, 0.5)],
            n_cases,
            seed,
            start_time: default_start(),
            inter_arrival: 4.0 * HOUR,
            business_calendar: false,
        }
    }

    pub fn activities(&self) -> Vec<String> {
        let mut a: Vec<String> = self.states.iter().map(|s| s.activity.clone()).collect();
        a.sort();
        a.dedup();
        a
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        let n = self.states.len();
        if n == 0 || self.start.is_empty() {
            return bad("process needs at least one state and a start distribution".into());
        }
        if !self.inter_arrival.is_finite() || self.inter_arrival <= 0.0 {
            return bad("inter_arrival must be positive".into());
        }
        let check_probs = |what: String, ps: &mut dyn Iterator<Item = f64>| -> Result<()> {
            let ps: Vec<f64> = ps.collect();
            if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(CoreError::Config(format!("{what}: probabilities must lie in [0, 1] and sum to 1")));
            }
            Ok(())
        };
        check_probs("start".into(), &mut self.start.iter().map(|s| s.1))?;
        if self.start.iter().any(|s| s.0 >= n) {
            return bad("start refers to a missing state".into());
        }
        for (i, s) in self.states.iter().enumerate() {
            check_probs(format!("state {i} ({})", s.activity), &mut s.next.iter().map(|t| t.1))?;
            if s.next.iter().any(|t| matches!(t.0, Target::State(j) if j >= n)) {
                return bad(format!("state {i} has a transition to a missing state"));
            }
            if !s.delay.sigma.is_finite() || s.delay.sigma < 0.0 || !s.delay.mu.is_finite() {
                return bad(format!("state {i} has an invalid delay"));
            }
            if s.activity.is_empty() {
                return bad(format!("state {i} has an empty activity"));
            }
        }
        // Every state must be able to reach End, otherwise cases may never finish.
        let mut reaches = vec![false; n];
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..n {
                if reaches[i] {
                    continue;
                }
                let ok = self.states[i].next.iter().any(|&(t, p)| {
                    p > 0.0
                        && match t {
                            Target::End => true,
                            Target::State(j) => reaches[j],
                        }
                });
                if ok {
                    reaches[i] = true;
                    changed = true;
                }
            }
        }
        if let Some(i) = reaches.iter().position(|r| !r) {
            return bad(format!(
                "state {i} ({}) cannot reach the end of the process",
                self.states[i].activity
            ));
        }
        Ok(())
    }

    fn pick<R: Rng, T: Copy>(rng: &mut R, options: &[(T, f64)]) -> T {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(t, p) in options {
            acc += p;
            if u < acc {
                return t;
            }
        }
        options.last().expect("non-empty options").0
    }

    /// Walks the chain from `from` and returns the visited states and the
    /// delays of each visited state.
    fn walk<R: Rng>(&self, rng: &mut R, from: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut cur = from;
        loop {
            match Self::pick(rng, &self.states[cur].next) {
                Target::End => return out,
                Target::State(j) => {
                    out.push((j, self.states[j].delay.sample(rng)));
                    cur = j;
                }
            }
        }
    }
}

fn skip_weekend(t: DateTime<Utc>) -> DateTime<Utc> {
    match t.weekday() {
        Weekday::Sat => t + Duration::days(2),
        Weekday::Sun => t + Duration::days(1),
        _ => t,
    }
}

fn millis(seconds: f64) -> Duration {
    Duration::milliseconds((seconds * 1000.0).round().max(1.0) as i64)
}

/// Deterministic log of `spec.n_cases` cases. Case `i` draws from its own
/// random stream, so output is independent of the thread count.
pub fn generate(spec: &ProcessSpec) -> Result<EventLog> {
    spec.validate()?;
    let cases: Vec<Case> = (0..spec.n_cases)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let offset = (i as f64 + rng.random::<f64>()) * spec.inter_arrival;
            let mut t = spec.start_time + millis(offset);
            if spec.business_calendar {
                t = skip_weekend(t);
            }
            let first = ProcessSpec::pick(&mut rng, &spec.start);
            let mut events = vec![Event {
                activity: spec.states[first].activity.clone(),
                timestamp: t,
                categorical: Vec::new(),
                continuous: Vec::new(),
            }];
            for (s, delay) in spec.walk(&mut rng, first) {
                t += millis(delay);
                if spec.business_calendar {
                    t = skip_weekend(t);
                }
                events.push(Event {
                    activity: spec.states[s].activity.clone(),
                    timestamp: t,
                    categorical: Vec::new(),
                    continuous: Vec::new(),
                });
            }
            Case {
                case_id: format!("C{i:06}"),
                events,
            }
        })
        .collect();
    Ok(EventLog::new(Schema::default(), cases))
}

/// Transition probabilities between states (the exits to End are implicit).
fn transient_system(spec: &ProcessSpec) -> DMatrix<f64> {
    let n = spec.states.len();
    let mut q = DMatrix::zeros(n, n);
    for (i, s) in spec.states.iter().enumerate() {
        for &(t, p) in &s.next {
            if let Target::State(j) = t {
                q[(i, j)] += p;
            }
        }
    }
    q
}

/// Solves `(I - Q) x = b`.
fn solve(spec: &ProcessSpec, b: DVector<f64>) -> Result<Vec<f64>> {
    let n = spec.states.len();
    let a = DMatrix::identity(n, n) - transient_system(spec);
    a.lu()
        .solve(&b)
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| CoreError::Config("process has no finite expected length".into()))
}

/// Expected number of events still to come after each state's event.
pub fn expected_remaining_events(spec: &ProcessSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let b = DVector::from_iterator(
        spec.states.len(),
        spec.states.iter().map(|s| {
            s.next
                .iter()
                .filter(|t| matches!(t.0, Target::State(_)))
                .map(|t| t.1)
                .sum::<f64>()
        }),
    );
    solve(spec, b)
}

/// Expected time in seconds from each state's event to the end of the case.
pub fn expected_remaining_time(spec: &ProcessSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let b = DVector::from_iterator(
        spec.states.len(),
        spec.states.iter().map(|s| {
            s.next
                .iter()
                .map(|&(t, p)| match t {
                    Target::State(j) => p * spec.states[j].delay.mean(),
                    Target::End => 0.0,
                })
                .sum::<f64>()
        }),
    );
    solve(spec, b)
}

/// Expected number of events per case.
pub fn expected_case_length(spec: &ProcessSpec) -> Result<f64> {
    let rem = expected_remaining_events(spec)?;
    Ok(spec.start.iter().map(|&(s, p)| p * (1.0 + rem[s])).sum())
}

/// The state a case is in after the given activities, following the
/// transitions whose activity matches each label.
pub fn state_for_prefix<S: AsRef<str>>(spec: &ProcessSpec, activities: &[S]) -> Result<Target> {
    let unreachable = || CoreError::Data(format!(
        "prefix {:?} is not a path of the process",
        activities.iter().map(|a| a.as_ref()).collect::<Vec<_>>()
    ));
    let (first, rest) = activities.split_first().ok_or_else(unreachable)?;
    let mut cur = spec
        .start
        .iter()
        .find(|&&(s, p)| p > 0.0 && spec.states[s].activity == first.as_ref())
        .map(|&(s, _)| s)
        .ok_or_else(unreachable)?;
    for a in rest {
        cur = spec.states[cur]
            .next
            .iter()
            .find_map(|&(t, p)| match t {
                Target::State(j) if p > 0.0 && spec.states[j].activity == a.as_ref() => Some(j),
                _ => None,
            })
            .ok_or_else(unreachable)?;
    }
    Ok(Target::State(cur))
}

/// `n` Monte Carlo draws of the time in seconds from `from` to the end.
pub fn true_remaining_time_distribution(spec: &ProcessSpec, from: Target, n: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let s = match from {
        Target::End => return Ok(vec![0.0; n]),
        Target::State(s) if s < spec.states.len() => s,
        Target::State(s) => return Err(CoreError::Data(format!("state {s} does not exist"))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| spec.walk(&mut rng, s).iter().map(|x| x.1).sum())
        .collect())
}

/// Number of distinct activity sequences an acyclic process can produce;
/// `None` when the transition graph has a cycle.
pub fn path_count(spec: &ProcessSpec) -> Option<usize> {
    fn count(spec: &ProcessSpec, s: usize, stack: &mut Vec<usize>, out: &mut HashSet<Vec<String>>, prefix: &mut Vec<String>) -> bool {
        if stack.contains(&s) {
            return false;
        }
        stack.push(s);
        prefix.push(spec.states[s].activity.clone());
        let mut ok = true;
        for &(t, p) in &spec.states[s].next {
            if p <= 0.0 {
                continue;
            }
            match t {
                Target::End => {
                    out.insert(prefix.clone());
                }
                Target::State(j) => ok &= count(spec, j, stack, out, prefix),
            }
        }
        prefix.pop();
        stack.pop();
        ok
    }
    let mut out = HashSet::new();
    for &(s, p) in &spec.start {
        if p > 0.0 && !count(spec, s, &mut Vec::new(), &mut out, &mut Vec::new()) {
            return None;
        }
    }
    Some(out.len())
}
