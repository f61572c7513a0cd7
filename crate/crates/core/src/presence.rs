//! Presence questionnaire scoring.
//!
//! Input CSV columns: `subject_id,subscale,item,rating` with subscale one of
//! `self`, `vehicle`, `environment`, item 1..=5 and an integer rating 1..=5.
//! Every subject must answer all five items of each subscale they appear in.
//! M is the mean of all pooled ratings of a subscale and SD the sample
//! standard deviation (n - 1) over the same ratings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ITEMS_PER_SUBSCALE: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subscale {
    #[serde(rename = "self")]
    SelfPresence,
    Vehicle,
    Environment,
}

impl Subscale {
    pub const ALL: [Subscale; 3] = [Subscale::SelfPresence, Subscale::Vehicle, Subscale::Environment];

    pub fn as_str(self) -> &'static str {
        match self {
            Subscale::SelfPresence => "self",
            Subscale::Vehicle => "vehicle",
            Subscale::Environment => "environment",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PresenceError {
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: rating {rating} outside 1..5")]
    RatingRange { row: usize, rating: i64 },
    #[error("row {row}: item {item} outside 1..5")]
    ItemRange { row: usize, item: i64 },
    #[error("row {row}: duplicate answer for subject {subject}, {subscale} item {item}")]
    Duplicate {
        row: usize,
        subject: String,
        subscale: &'static str,
        item: u8,
    },
    #[error("subject {subject} is missing {subscale} item(s) {items:?}")]
    MissingItems {
        subject: String,
        subscale: &'static str,
        items: Vec<u8>,
    },
    #[error("no responses")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub subject_id: String,
    pub subscale: Subscale,
    pub item: u8,
    pub rating: u8,
}

#[derive(Debug, Deserialize)]
struct RawRow {
    subject_id: String,
    subscale: String,
    item: i64,
    rating: i64,
}

/// Parses and validates the CSV (header row required).
pub fn parse_responses<R: Read>(input: R) -> Result<Vec<Response>, PresenceError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<RawRow>().enumerate() {
        // row 1 is the header
        let row = i + 2;
        let raw = rec.map_err(|e| PresenceError::Parse {
            row,
            message: e.to_string(),
        })?;
        let subscale = match raw.subscale.as_str() {
            "self" => Subscale::SelfPresence,
            "vehicle" => Subscale::Vehicle,
            "environment" => Subscale::Environment,
            other => {
                return Err(PresenceError::Parse {
                    row,
                    message: format!("unknown subscale {other:?}"),
                })
            }
        };
        if !(1..=i64::from(ITEMS_PER_SUBSCALE)).contains(&raw.item) {
            return Err(PresenceError::ItemRange { row, item: raw.item });
        }
        if !(1..=5).contains(&raw.rating) {
            return Err(PresenceError::RatingRange { row, rating: raw.rating });
        }
        out.push(Response {
            subject_id: raw.subject_id,
            subscale,
            item: raw.item as u8,
            rating: raw.rating as u8,
        });
    }
    Ok(out)
}

/// Writes responses in the accepted CSV schema.
pub fn write_responses(responses: &[Response]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subject_id", "subscale", "item", "rating"]).expect("in-memory write");
    for r in responses {
        w.write_record([
            r.subject_id.as_str(),
            r.subscale.as_str(),
            &r.item.to_string(),
            &r.rating.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(M={:.2}, SD={:.3})", self.mean, self.sd)
    }
}

/// Mean and sample standard deviation; SD is 0 for a single value.
pub fn mean_sd(values: &[f64]) -> Stat {
    let n = values.len();
    if n == 0 {
        return Stat {
            mean: f64::NAN,
            sd: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Stat { mean, sd, n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscaleReport {
    pub subscale: Subscale,
    pub stat: Stat,
    /// Mean rating per item 1..=5.
    pub item_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceReport {
    pub n_subjects: usize,
    pub subscales: Vec<SubscaleReport>,
}

impl PresenceReport {
    pub fn get(&self, s: Subscale) -> Option<&SubscaleReport> {
        self.subscales.iter().find(|r| r.subscale == s)
    }
}

impl fmt::Display for PresenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "subjects: {}", self.n_subjects)?;
        for r in &self.subscales {
            let items: Vec<String> = r.item_means.iter().map(|m| format!("{m:.2}")).collect();
            writeln!(f, "{:<12} {}  items [{}]", r.subscale.as_str(), r.stat, items.join(", "))?;
        }
        Ok(())
    }
}

/// Scores validated responses. Subscales nobody answered are omitted.
pub fn score_presence(responses: &[Response]) -> Result<PresenceReport, PresenceError> {
    if responses.is_empty() {
        return Err(PresenceError::Empty);
    }
    let mut seen: BTreeMap<(&str, Subscale), BTreeSet<u8>> = BTreeMap::new();
    for (i, r) in responses.iter().enumerate() {
        if !seen.entry((&r.subject_id, r.subscale)).or_default().insert(r.item) {
            return Err(PresenceError::Duplicate {
                row: i + 2,
                subject: r.subject_id.clone(),
                subscale: r.subscale.as_str(),
                item: r.item,
            });
        }
    }
    for ((subject, subscale), items) in &seen {
        let missing: Vec<u8> = (1..=ITEMS_PER_SUBSCALE).filter(|i| !items.contains(i)).collect();
        if !missing.is_empty() {
            return Err(PresenceError::MissingItems {
                subject: subject.to_string(),
                subscale: subscale.as_str(),
                items: missing,
            });
        }
    }
    let subjects: BTreeSet<&str> = responses.iter().map(|r| r.subject_id.as_str()).collect();
    let subscales = Subscale::ALL
        .iter()
        .filter_map(|&s| {
            // sort so the float sums do not depend on row order
            let mut ratings: Vec<(u8, u8)> = responses
                .iter()
                .filter(|r| r.subscale == s)
                .map(|r| (r.item, r.rating))
                .collect();
            if ratings.is_empty() {
                return None;
            }
            ratings.sort_unstable();
            let values: Vec<f64> = ratings.iter().map(|(_, v)| f64::from(*v)).collect();
            let item_means = (1..=ITEMS_PER_SUBSCALE)
                .map(|item| {
                    let v: Vec<f64> = ratings
                        .iter()
                        .filter(|(i, _)| *i == item)
                        .map(|(_, v)| f64::from(*v))
                        .collect();
                    mean_sd(&v).mean
                })
                .collect();
            Some(SubscaleReport {
                subscale: s,
                stat: mean_sd(&values),
                item_means,
            })
        })
        .collect();
    Ok(PresenceReport {
        n_subjects: subjects.len(),
        subscales,
    })
}

/// Parse, validate and score in one go.
pub fn score_csv<R: Read>(input: R) -> Result<PresenceReport, PresenceError> {
    score_presence(&parse_responses(input)?)
}
