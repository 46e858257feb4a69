//! Time-feature engineering, vocabularies, scaling, case splitting and
//! prefix/suffix pair generation.
//!
//! Every event carries four engineered continuous features ahead of the
//! declared extra continuous attributes, and the activity ahead of the extra
//! categorical attributes. Attribute indices used by [`Routing`] refer to
//! these combined lists.

use chrono::{DateTime, Datelike, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::eventlog::{Case, EventLog, Schema, NAN_LABEL};
use crate::setting::{DecoderRouting, HyperparameterSetting, TimeNoise};

pub const UNK_LABEL: &str = "⟨UNK⟩";
pub const EOS_LABEL: &str = "⟨EOS⟩";

pub const TIME_FEATURES: [&str; 4] = ["case_elapsed", "event_elapsed", "day_of_week", "time_of_day"];
pub const CASE_ELAPSED: usize = 0;
pub const EVENT_ELAPSED: usize = 1;

/// Share of the longest training cases ignored when choosing the padding length.
pub const PAD_EXCLUDE_FRACTION: f64 = 0.015;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturedEvent {
    pub activity: String,
    pub timestamp: DateTime<Utc>,
    /// Seconds since the first event of the case.
    pub case_elapsed: f64,
    /// Seconds since the previous event, 0 for the first.
    pub event_elapsed: f64,
    /// Monday is 0.
    pub day_of_week: f64,
    /// Seconds since midnight UTC.
    pub time_of_day: f64,
    pub categorical: Vec<String>,
    pub continuous: Vec<Option<f64>>,
}

impl FeaturedEvent {
    /// Activity followed by the extra categorical labels.
    pub fn categorical_values(&self) -> Vec<&str> {
        std::iter::once(self.activity.as_str())
            .chain(self.categorical.iter().map(String::as_str))
            .collect()
    }

    /// The four time features followed by the extra continuous values.
    pub fn continuous_values(&self) -> Vec<Option<f64>> {
        [self.case_elapsed, self.event_elapsed, self.day_of_week, self.time_of_day]
            .into_iter()
            .map(Some)
            .chain(self.continuous.iter().copied())
            .collect()
    }
}

fn seconds_between(a: DateTime<Utc>, b: DateTime<Utc>) -> f64 {
    (b - a).num_milliseconds() as f64 / 1000.0
}

pub fn engineer_time_features(case: &Case) -> Vec<FeaturedEvent> {
    let Some(first) = case.events.first() else {
        return Vec::new();
    };
    let start = first.timestamp;
    let mut prev = start;
    case.events
        .iter()
        .map(|e| {
            let t = e.timestamp;
            let midnight = t.date_naive().and_hms_opt(0, 0, 0).expect("valid midnight").and_utc();
            let fe = FeaturedEvent {
                activity: e.activity.clone(),
                timestamp: t,
                case_elapsed: seconds_between(start, t),
                event_elapsed: seconds_between(prev, t),
                day_of_week: t.weekday().num_days_from_monday() as f64,
                time_of_day: seconds_between(midnight, t),
                categorical: e.categorical.clone(),
                continuous: e.continuous.clone(),
            };
            prev = t;
            fe
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Shuffles case ids with the seed and cuts them into train/validation/test.
/// Validation and test sizes are floored; the remainder goes to training.
pub fn split_cases(log: &EventLog, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (a, b, c) = ratios;
    if (a + b + c - 1.0).abs() > 1e-9 || a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(CoreError::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let n = log.cases.len();
    if n < 3 {
        return Err(CoreError::Data(format!("need at least 3 cases to split, got {n}")));
    }
    let mut ids: Vec<String> = log.cases.iter().map(|c| c.case_id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_val = (b * n as f64).floor() as usize;
    let n_test = (c * n as f64).floor() as usize;
    let test = ids[..n_test].to_vec();
    let validation = ids[n_test..n_test + n_val].to_vec();
    let train = ids[n_test + n_val..].to_vec();
    Ok(Split {
        train,
        validation,
        test,
        seed,
    })
}

/// `min(600, round(1.6 * (K + 2)^0.56))` for `K` seen classes.
pub fn embedding_dim(seen_classes: usize) -> usize {
    let n = (seen_classes + 2) as f64;
    ((1.6 * n.powf(0.56)).round() as usize).min(600)
}

/// Largest case length after dropping the longest 1.5% of cases.
pub fn pad_length(lengths: &[usize]) -> usize {
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let drop = (PAD_EXCLUDE_FRACTION * sorted.len() as f64).floor() as usize;
    sorted.truncate(sorted.len() - drop);
    sorted.last().copied().unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalEncoder {
    pub name: String,
    /// Seen labels, sorted; label `i` has index `i`.
    pub labels: Vec<String>,
    pub embed_dim: usize,
    /// Only the activity attribute carries an end-of-sequence class.
    pub with_eos: bool,
}

impl CategoricalEncoder {
    pub fn seen(&self) -> usize {
        self.labels.len()
    }

    pub fn nan_index(&self) -> usize {
        self.seen()
    }

    pub fn unk_index(&self) -> usize {
        self.seen() + 1
    }

    pub fn eos_index(&self) -> Option<usize> {
        self.with_eos.then(|| self.seen() + 2)
    }

    /// Rows of the embedding matrix and width of the logit head.
    pub fn n_classes(&self) -> usize {
        self.seen() + 2 + usize::from(self.with_eos)
    }

    pub fn index(&self, label: &str) -> usize {
        if label == NAN_LABEL {
            return self.nan_index();
        }
        match self.labels.binary_search_by(|l| l.as_str().cmp(label)) {
            Ok(i) => i,
            Err(_) => self.unk_index(),
        }
    }

    pub fn label(&self, index: usize) -> &str {
        let k = self.seen();
        match index {
            i if i < k => &self.labels[i],
            i if i == k => NAN_LABEL,
            i if i == k + 1 => UNK_LABEL,
            _ => EOS_LABEL,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Standard,
    /// Standard scaling of `ln(1 + x)`.
    LogStandard,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub std: f64,
    pub transform: Transform,
}

/// Largest exponent accepted when inverting the log transform.
const MAX_EXP_ARG: f64 = 700.0;

impl Scaler {
    pub fn fit(values: &[f64], transform: Transform) -> Self {
        let xs: Vec<f64> = values.iter().map(|&x| Self::forward(x, transform)).collect();
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 0.0 && std.is_finite() { std } else { 1.0 },
            transform,
        }
    }

    fn forward(x: f64, transform: Transform) -> f64 {
        match transform {
            Transform::Standard => x,
            Transform::LogStandard => x.max(0.0).ln_1p(),
        }
    }

    pub fn encode(&self, x: f64) -> f64 {
        (Self::forward(x, self.transform) - self.mean) / self.std
    }

    pub fn decode(&self, v: f64) -> f64 {
        let z = v * self.std + self.mean;
        match self.transform {
            Transform::Standard => z,
            Transform::LogStandard => (z.min(MAX_EXP_ARG).exp_m1()).max(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousEncoder {
    pub name: String,
    /// Applied to encoder inputs.
    pub encoder: Scaler,
    /// Applied to decoder inputs and targets.
    pub decoder: Scaler,
}

/// Attribute indices consumed by the encoder and by the decoder. The decoder
/// predicts exactly the attributes it consumes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Routing {
    pub encoder_categorical: Vec<usize>,
    pub encoder_continuous: Vec<usize>,
    pub decoder_categorical: Vec<usize>,
    pub decoder_continuous: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Encoder,
    DecoderInput,
    DecoderTarget,
}

/// Model-ready event: class indices and scaled values for one role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedEvent {
    pub cat: Vec<usize>,
    pub con: Vec<f64>,
    /// False where the raw value was missing (encoded as 0).
    pub present: Vec<bool>,
}

impl EncodedEvent {
    fn zeros(n_cat: usize, n_con: usize) -> Self {
        Self {
            cat: vec![0; n_cat],
            con: vec![0.0; n_con],
            present: vec![false; n_con],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingModel {
    pub schema: Schema,
    /// Activity first, then the extra categorical attributes.
    pub categorical: Vec<CategoricalEncoder>,
    /// Time features first, then the extra continuous attributes.
    pub continuous: Vec<ContinuousEncoder>,
    pub pad_length: usize,
    pub routing: Routing,
}

impl EncodingModel {
    pub fn activity(&self) -> &CategoricalEncoder {
        &self.categorical[0]
    }

    pub fn eos_index(&self) -> usize {
        self.activity().eos_index().expect("activity has an EOS class")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("encoding model serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn scaler(&self, attr: usize, role: Role) -> &Scaler {
        match role {
            Role::Encoder => &self.continuous[attr].encoder,
            Role::DecoderInput | Role::DecoderTarget => &self.continuous[attr].decoder,
        }
    }

    fn routed(&self, role: Role) -> (&[usize], &[usize]) {
        match role {
            Role::Encoder => (&self.routing.encoder_categorical, &self.routing.encoder_continuous),
            Role::DecoderInput | Role::DecoderTarget => {
                (&self.routing.decoder_categorical, &self.routing.decoder_continuous)
            }
        }
    }

    pub fn encode_event(&self, ev: &FeaturedEvent, role: Role) -> EncodedEvent {
        let (cats, cons) = self.routed(role);
        let labels = ev.categorical_values();
        let values = ev.continuous_values();
        let cat = cats.iter().map(|&a| self.categorical[a].index(labels[a])).collect();
        let mut con = Vec::with_capacity(cons.len());
        let mut present = Vec::with_capacity(cons.len());
        for &a in cons {
            match values[a] {
                Some(x) => {
                    con.push(self.scaler(a, role).encode(x));
                    present.push(true);
                }
                None => {
                    con.push(0.0);
                    present.push(false);
                }
            }
        }
        EncodedEvent { cat, con, present }
    }

    /// Decoder-side end-of-sequence event: EOS activity, NaN for the other
    /// categorical attributes, zero time targets.
    pub fn eos_event(&self) -> EncodedEvent {
        let cats = &self.routing.decoder_categorical;
        let cat = cats
            .iter()
            .map(|&a| {
                let c = &self.categorical[a];
                c.eos_index().unwrap_or_else(|| c.nan_index())
            })
            .collect();
        let n = self.routing.decoder_continuous.len();
        EncodedEvent {
            cat,
            con: vec![0.0; n],
            present: vec![false; n],
        }
    }

    /// Inverse scaling of a decoder-side value of continuous attribute `attr`.
    pub fn decode_continuous(&self, value: f64, attr: usize) -> f64 {
        self.continuous[attr].decoder.decode(value)
    }

    /// Positions of case_elapsed and event_elapsed inside the decoder's
    /// continuous vector.
    pub fn decoder_time_slots(&self) -> (usize, usize) {
        let pos = |a| {
            self.routing
                .decoder_continuous
                .iter()
                .position(|&x| x == a)
                .expect("time features are always routed to the decoder")
        };
        (pos(CASE_ELAPSED), pos(EVENT_ELAPSED))
    }

    pub fn decoder_attribute_names(&self) -> (Vec<String>, Vec<String>) {
        let cats = self
            .routing
            .decoder_categorical
            .iter()
            .map(|&a| self.categorical[a].name.clone())
            .collect();
        let cons = self
            .routing
            .decoder_continuous
            .iter()
            .map(|&a| self.continuous[a].name.clone())
            .collect();
        (cats, cons)
    }
}

pub fn fit_encoding(train_cases: &[&Case], schema: &Schema, setting: &HyperparameterSetting) -> Result<EncodingModel> {
    if train_cases.is_empty() {
        return Err(CoreError::Data("cannot fit an encoding on zero training cases".into()));
    }
    let featured: Vec<Vec<FeaturedEvent>> = train_cases.iter().map(|c| engineer_time_features(c)).collect();
    let events = || featured.iter().flatten();

    let cat_names: Vec<String> = std::iter::once("activity".to_string())
        .chain(schema.categorical.iter().cloned())
        .collect();
    let mut categorical = Vec::with_capacity(cat_names.len());
    for (a, name) in cat_names.iter().enumerate() {
        let mut labels: Vec<String> = events()
            .map(|e| e.categorical_values()[a])
            .filter(|l| *l != NAN_LABEL)
            .map(str::to_string)
            .collect();
        labels.sort();
        labels.dedup();
        if labels.is_empty() {
            return Err(CoreError::Data(format!("attribute {name:?} has no observed values in the training split")));
        }
        categorical.push(CategoricalEncoder {
            name: name.clone(),
            embed_dim: embedding_dim(labels.len()),
            labels,
            with_eos: a == 0,
        });
    }

    let con_names: Vec<String> = TIME_FEATURES
        .iter()
        .map(|s| s.to_string())
        .chain(schema.continuous.iter().cloned())
        .collect();
    let mut continuous = Vec::with_capacity(con_names.len());
    for (a, name) in con_names.iter().enumerate() {
        let values: Vec<f64> = events().filter_map(|e| e.continuous_values()[a]).collect();
        if values.is_empty() {
            return Err(CoreError::Data(format!("attribute {name:?} has no observed values in the training split")));
        }
        let encoder = Scaler::fit(&values, Transform::Standard);
        let log_time = setting.time_noise == TimeNoise::LogNormal && (a == CASE_ELAPSED || a == EVENT_ELAPSED);
        let decoder = if log_time {
            Scaler::fit(&values, Transform::LogStandard)
        } else {
            encoder
        };
        continuous.push(ContinuousEncoder {
            name: name.clone(),
            encoder,
            decoder,
        });
    }

    let all_cat: Vec<usize> = (0..categorical.len()).collect();
    let all_con: Vec<usize> = (0..continuous.len()).collect();
    let routing = match setting.decoder_routing {
        DecoderRouting::All => Routing {
            encoder_categorical: all_cat.clone(),
            encoder_continuous: all_con.clone(),
            decoder_categorical: all_cat,
            decoder_continuous: all_con,
        },
        DecoderRouting::ActivityAndTime => Routing {
            encoder_categorical: all_cat,
            encoder_continuous: all_con,
            decoder_categorical: vec![0],
            decoder_continuous: (0..TIME_FEATURES.len()).collect(),
        },
    };

    let lengths: Vec<usize> = train_cases.iter().map(|c| c.len()).collect();
    Ok(EncodingModel {
        schema: schema.clone(),
        categorical,
        continuous,
        pad_length: pad_length(&lengths).max(1),
        routing,
    })
}

/// Ground-truth remainder of a case after a prefix, in original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSuffix {
    pub activities: Vec<String>,
    /// Seconds.
    pub event_elapsed: Vec<f64>,
    /// Seconds since case start.
    pub case_elapsed: Vec<f64>,
}

impl TruthSuffix {
    pub fn len(&self) -> usize {
        self.activities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activities.is_empty()
    }

    pub fn remaining_time_sum(&self) -> f64 {
        self.event_elapsed.iter().sum()
    }

    /// Final case elapsed time minus the prefix's case elapsed time.
    pub fn remaining_time_last(&self, prefix_case_elapsed: f64) -> f64 {
        self.case_elapsed.last().map_or(0.0, |&c| c - prefix_case_elapsed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixSuffixPair {
    pub case_id: String,
    /// Number of observed events.
    pub k: usize,
    /// Encoder inputs, left-padded to the padding length.
    pub prefix: Vec<EncodedEvent>,
    pub mask: Vec<bool>,
    /// Last prefix event in decoder-input form.
    pub decoder_start: EncodedEvent,
    /// Next `S` events in decoder form, EOS-padded.
    pub target: Vec<EncodedEvent>,
    pub target_eos: Vec<bool>,
    pub truth: TruthSuffix,
    /// Raw activity labels of the whole (untruncated) prefix.
    pub prefix_activities: Vec<String>,
    /// Seconds.
    pub prefix_case_elapsed: f64,
}

/// One pair per prefix length `k` in `1..len`.
pub fn make_pairs(case: &Case, enc: &EncodingModel, s: usize) -> Vec<PrefixSuffixPair> {
    let featured = engineer_time_features(case);
    let m = featured.len();
    if m < 2 {
        return Vec::new();
    }
    let pad = enc.pad_length;
    let n_enc_cat = enc.routing.encoder_categorical.len();
    let n_enc_con = enc.routing.encoder_continuous.len();
    let encoded: Vec<EncodedEvent> = featured.iter().map(|e| enc.encode_event(e, Role::Encoder)).collect();
    let dec: Vec<EncodedEvent> = featured.iter().map(|e| enc.encode_event(e, Role::DecoderTarget)).collect();
    let eos = enc.eos_event();

    (1..m)
        .map(|k| {
            let start = k.saturating_sub(pad);
            let kept = k - start;
            let mut prefix = vec![EncodedEvent::zeros(n_enc_cat, n_enc_con); pad - kept];
            prefix.extend(encoded[start..k].iter().cloned());
            let mut mask = vec![false; pad - kept];
            mask.extend(std::iter::repeat_n(true, kept));

            let mut target = Vec::with_capacity(s);
            let mut target_eos = Vec::with_capacity(s);
            for j in 0..s {
                match dec.get(k + j) {
                    Some(e) => {
                        target.push(e.clone());
                        target_eos.push(false);
                    }
                    None => {
                        target.push(eos.clone());
                        target_eos.push(true);
                    }
                }
            }
            let rest = &featured[k..];
            PrefixSuffixPair {
                case_id: case.case_id.clone(),
                k,
                prefix,
                mask,
                decoder_start: dec[k - 1].clone(),
                target,
                target_eos,
                truth: TruthSuffix {
                    activities: rest.iter().map(|e| e.activity.clone()).collect(),
                    event_elapsed: rest.iter().map(|e| e.event_elapsed).collect(),
                    case_elapsed: rest.iter().map(|e| e.case_elapsed).collect(),
                },
                prefix_activities: featured[..k].iter().map(|e| e.activity.clone()).collect(),
                prefix_case_elapsed: featured[k - 1].case_elapsed,
            }
        })
        .collect()
}

/// Pairs for the listed case ids, in list order.
pub fn pairs_for(log: &EventLog, ids: &[String], enc: &EncodingModel, s: usize) -> Result<Vec<PrefixSuffixPair>> {
    let index: std::collections::HashMap<&str, &Case> = log.cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let mut out = Vec::new();
    for id in ids {
        let case = index
            .get(id.as_str())
            .ok_or_else(|| CoreError::Data(format!("case {id:?} not in log")))?;
        out.extend(make_pairs(case, enc, s));
    }
    Ok(out)
}

/// Default train/validation/test proportions.
pub const SPLIT_RATIOS: (f64, f64, f64) = (0.65, 0.15, 0.20);

/// A split log with its fitted encoding and the pairs of each part.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub encoding: EncodingModel,
    pub train: Vec<PrefixSuffixPair>,
    pub validation: Vec<PrefixSuffixPair>,
    pub test: Vec<PrefixSuffixPair>,
}

/// Splits `log`, fits the encoding on the training cases and builds pairs
/// with decoder window `window`.
pub fn prepare_dataset(
    log: &EventLog,
    ratios: (f64, f64, f64),
    seed: u64,
    setting: &HyperparameterSetting,
    window: usize,
) -> Result<Dataset> {
    let split = split_cases(log, ratios, seed)?;
    let index: std::collections::HashMap<&str, &Case> = log.cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let train_cases: Vec<&Case> = split.train.iter().map(|id| index[id.as_str()]).collect();
    let encoding = fit_encoding(&train_cases, &log.schema, setting)?;
    let train = pairs_for(log, &split.train, &encoding, window)?;
    let validation = pairs_for(log, &split.validation, &encoding, window)?;
    let test = pairs_for(log, &split.test, &encoding, window)?;
    Ok(Dataset {
        split,
        encoding,
        train,
        validation,
        test,
    })
}
