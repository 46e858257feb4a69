mod common;

use std::collections::HashSet;

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use psp_core::eventlog::{
    compute_stats, parse_csv, validate_log, Case, ColumnMapping, Event, EventLog, ParseNote, Schema, TimeUnit,
    ValidationIssue,
};
use psp_core::features::{
    embedding_dim, engineer_time_features, make_pairs, pad_length, split_cases, Scaler, Transform, SPLIT_RATIOS,
};
use psp_core::synthlog::{generate, ProcessSpec};
use psp_core::{CoreError, ErrorClass};

fn chain_log(n: usize) -> EventLog {
    generate(&ProcessSpec::chain(&["a", "b", "c"], 60.0, 0.5, n, 1)).unwrap()
}

#[test]
fn embedding_dim_matches_heuristic_for_all_k() {
    for k in 1..=10_000usize {
        let oracle = (1.6 * ((k + 2) as f64).powf(0.56)).round().min(600.0) as usize;
        assert_eq!(embedding_dim(k), oracle, "K = {k}");
    }
    assert_eq!(embedding_dim(5), 5);
    assert_eq!(embedding_dim(10_000), 278);
}

#[test]
fn split_sizes_follow_floor_rounding() {
    for n in [3usize, 7, 10, 19, 20, 99, 100, 101, 333, 1000, 2000, 9896] {
        let s = split_cases(&chain_log(n), SPLIT_RATIOS, 5).unwrap();
        let (val, test) = (n * 15 / 100, n * 20 / 100);
        assert_eq!((s.validation.len(), s.test.len(), s.train.len()), (val, test, n - val - test), "n = {n}");
        let all: HashSet<&String> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
        assert_eq!(all.len(), n);
    }
}

#[test]
fn split_is_seeded() {
    let log = chain_log(200);
    let a = split_cases(&log, SPLIT_RATIOS, 1).unwrap();
    assert_eq!(a, split_cases(&log, SPLIT_RATIOS, 1).unwrap());
    assert_ne!(a.test, split_cases(&log, SPLIT_RATIOS, 2).unwrap().test);
    assert!(matches!(split_cases(&log, (0.5, 0.5, 0.5), 1), Err(CoreError::Config(_))));
    assert!(matches!(split_cases(&chain_log(2), SPLIT_RATIOS, 1), Err(CoreError::Data(_))));
}

proptest! {
    #[test]
    fn pad_length_drops_the_longest_cases(lengths in prop::collection::vec(1usize..60, 1..400)) {
        let pad = pad_length(&lengths);
        let dropped = lengths.len() * 15 / 1000;
        let longer = lengths.iter().filter(|&&l| l > pad).count();
        prop_assert!(longer <= dropped);
        prop_assert!(lengths.iter().filter(|&&l| l >= pad).count() > dropped);
    }

    #[test]
    fn scaler_round_trips(values in prop::collection::vec(0.0f64..1e7, 2..50), x in 0.0f64..1e7) {
        for t in [Transform::Standard, Transform::LogStandard] {
            let s = Scaler::fit(&values, t);
            let back = s.decode(s.encode(x));
            prop_assert!((back - x).abs() <= 1e-6 * x.max(1.0), "{t:?}: {x} -> {back}");
        }
    }
}

#[test]
fn pad_length_examples() {
    assert_eq!(pad_length(&[3, 4, 5]), 5);
    let mut lengths = vec![5; 199];
    lengths.push(40);
    assert_eq!(pad_length(&lengths), 5);
    assert_eq!(pad_length(&[]), 0);
}

#[test]
fn scaler_is_standardizing_and_log_decode_is_non_negative() {
    let s = Scaler::fit(&[1.0, 2.0, 3.0, 4.0], Transform::Standard);
    assert_eq!(s.mean, 2.5);
    assert!((s.std - 1.25f64.sqrt()).abs() < 1e-15);
    let l = Scaler::fit(&[0.0, 10.0, 1000.0], Transform::LogStandard);
    assert_eq!(l.decode(-1e6), 0.0);
    assert!(l.decode(1e6).is_finite());
}

fn event(activity: &str, secs: i64) -> Event {
    Event {
        activity: activity.into(),
        timestamp: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + Duration::seconds(secs),
        categorical: Vec::new(),
        continuous: Vec::new(),
    }
}

#[test]
fn time_features_follow_definitions() {
    // 2024-01-01 is a Monday.
    let case = Case {
        case_id: "c".into(),
        events: vec![event("a", 0), event("b", 90), event("c", 3600 * 30)],
    };
    let f = engineer_time_features(&case);
    assert_eq!(f.iter().map(|e| e.case_elapsed).collect::<Vec<_>>(), [0.0, 90.0, 108_000.0]);
    assert_eq!(f.iter().map(|e| e.event_elapsed).collect::<Vec<_>>(), [0.0, 90.0, 107_910.0]);
    assert_eq!(f[2].day_of_week, 1.0);
    assert_eq!(f[2].time_of_day, 6.0 * 3600.0);
}

#[test]
fn pairs_cover_every_proper_prefix() {
    let setting = common::setting(2, 8);
    let ds = common::repair_dataset(40, 9, &setting);
    let log = generate(&ProcessSpec::repair(40, 9)).unwrap();
    let case = log.case(&ds.split.test[0]).unwrap();
    let pairs = make_pairs(case, &ds.encoding, 5);
    assert_eq!(pairs.len(), case.len() - 1);
    for p in &pairs {
        assert_eq!(p.prefix_activities.len(), p.k);
        assert_eq!(p.truth.len(), case.len() - p.k);
        assert_eq!(p.prefix.len(), ds.encoding.pad_length);
        assert_eq!(p.mask.iter().filter(|&&m| m).count(), p.k.min(ds.encoding.pad_length));
        assert_eq!(p.target.len(), 5);
        let real = p.target_eos.iter().filter(|&&e| !e).count();
        assert_eq!(real, p.truth.len().min(5));
        assert!((p.truth.remaining_time_sum() - (case.duration_seconds() - p.prefix_case_elapsed)).abs() < 1e-6);
    }
    let one = Case {
        case_id: "x".into(),
        events: vec![event("register", 0)],
    };
    assert!(make_pairs(&one, &ds.encoding, 5).is_empty());
}

#[test]
fn unseen_activity_maps_to_unk() {
    let setting = common::setting(2, 8);
    let ds = common::repair_dataset(40, 10, &setting);
    let act = ds.encoding.activity();
    assert_eq!(act.index("never_seen"), act.unk_index());
    assert_eq!(act.eos_index(), Some(ds.encoding.eos_index()));
    assert_eq!(act.n_classes(), act.seen() + 3);
}

#[test]
fn csv_rows_are_grouped_and_sorted() {
    let text = "case,act,ts,kind,cost\n\
        b,x,2024-01-01T00:00:05Z,u,\n\
        a,y,2024-01-01T00:00:10Z,,2.5\n\
        a,x,2024-01-01T00:00:00Z,v,1\n\
        b,y,2024-01-01T00:00:09Z,u,3\n";
    let mapping = ColumnMapping {
        case_id: "case".into(),
        activity: "act".into(),
        timestamp: "ts".into(),
        timestamp_format: None,
        categorical: vec!["kind".into()],
        continuous: vec!["cost".into()],
    };
    let log = parse_csv(text.as_bytes(), &mapping).unwrap();
    assert_eq!(log.cases.len(), 2);
    let a = log.case("a").unwrap();
    assert_eq!(a.activities(), ["x", "y"]);
    assert_eq!(a.events[1].categorical[0], psp_core::eventlog::NAN_LABEL);
    assert_eq!(log.case("b").unwrap().events[0].continuous[0], None);
    assert!(log.notes.contains(&ParseNote::NonMonotoneTimestamps { case_id: "a".into() }));
    assert_eq!(log.schema, Schema {
        categorical: vec!["kind".into()],
        continuous: vec!["cost".into()],
    });
    let issues = validate_log(&log).issues;
    assert!(issues.contains(&ValidationIssue::NonMonotoneTimestamps { case_id: "a".into() }));
    assert!(issues.contains(&ValidationIssue::MissingValue {
        case_id: "b".into(),
        event: 0,
        attribute: "cost".into(),
    }));
}

#[test]
fn bad_csv_is_a_data_error() {
    let mapping = ColumnMapping::canonical(&Schema::default());
    let missing = "case_id,activity\nA,x\n";
    let err = parse_csv(missing.as_bytes(), &mapping).unwrap_err();
    assert!(matches!(err, CoreError::MissingColumn(ref c) if c == "timestamp"));
    assert_eq!(err.class(), ErrorClass::Data);
    let bad_time = "case_id,activity,timestamp\nA,x,yesterday\n";
    assert!(matches!(parse_csv(bad_time.as_bytes(), &mapping), Err(CoreError::Timestamp { .. })));
}

#[test]
fn stats_and_units() {
    let log = chain_log(50);
    let stats = compute_stats(&log).unwrap();
    assert_eq!((stats.n_cases, stats.n_events, stats.n_variants, stats.n_activities), (50, 150, 1, 3));
    assert_eq!(stats.mean_case_length, 3.0);
    assert_eq!(stats.sd_case_length, 0.0);
    let (d, _) = stats.duration_in(TimeUnit::Minutes);
    assert!((d - stats.mean_case_duration / 60.0).abs() < 1e-12);
    assert_eq!(TimeUnit::Days.from_seconds(172_800.0), 2.0);
    assert!(matches!(compute_stats(&EventLog::default()), Err(CoreError::Data(_))));
}
