use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DrError, Result};

/// One user–item interaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: u64,
    pub item_id: u64,
    pub rating: f64,
    /// Seconds; never negative.
    pub timestamp: u64,
}

/// Parsed rows plus the number of rows that could not be read.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReadReport {
    pub records: Vec<InteractionRecord>,
    pub skipped: usize,
}

const USER_COLUMNS: [&str; 3] = ["user_id", "userId", "user"];
const ITEM_COLUMNS: [&str; 4] = ["item_id", "itemId", "movieId", "item"];
const RATING_COLUMNS: [&str; 1] = ["rating"];
const TIME_COLUMNS: [&str; 2] = ["timestamp", "time"];

/// Rating used when the input has no rating column.
pub const DEFAULT_RATING: f64 = 5.0;

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| names.contains(&h.trim()))
}

/// Read headered CSV (`user_id,item_id,rating,timestamp`; MovieLens
/// `userId,movieId` headers also accepted). Unparseable rows are skipped
/// and counted.
pub fn read_interactions<R: Read>(reader: R) -> Result<ReadReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let user = find_column(&headers, &USER_COLUMNS)
        .ok_or_else(|| DrError::Parse("missing user id column".into()))?;
    let item = find_column(&headers, &ITEM_COLUMNS)
        .ok_or_else(|| DrError::Parse("missing item id column".into()))?;
    let time = find_column(&headers, &TIME_COLUMNS)
        .ok_or_else(|| DrError::Parse("missing timestamp column".into()))?;
    let rating = find_column(&headers, &RATING_COLUMNS);

    let mut report = ReadReport::default();
    let mut row = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                report.skipped += 1;
                continue;
            }
        }
        let field = |i: usize| row.get(i).map(str::trim);
        let parsed = (|| {
            let user_id = field(user)?.parse().ok()?;
            let item_id = field(item)?.parse().ok()?;
            let timestamp = field(time)?.parse().ok()?;
            let rating = match rating {
                Some(c) => field(c)?.parse::<f64>().ok().filter(|r| r.is_finite())?,
                None => DEFAULT_RATING,
            };
            Some(InteractionRecord {
                user_id,
                item_id,
                rating,
                timestamp,
            })
        })();
        match parsed {
            Some(r) => report.records.push(r),
            None => report.skipped += 1,
        }
    }
    if report.skipped > 0 {
        log::warn!("skipped {} malformed rows", report.skipped);
    }
    Ok(report)
}

pub fn read_interactions_path(path: &Path) -> Result<ReadReport> {
    read_interactions(File::open(path)?)
}

pub fn write_interactions<W: Write>(records: &[InteractionRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
}

pub fn corpus_stats(records: &[InteractionRecord]) -> CorpusStats {
    let mut users: Vec<u64> = records.iter().map(|r| r.user_id).collect();
    let mut items: Vec<u64> = records.iter().map(|r| r.item_id).collect();
    users.sort_unstable();
    users.dedup();
    items.sort_unstable();
    items.dedup();
    CorpusStats {
        users: users.len(),
        items: items.len(),
        interactions: records.len(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub min_rating: f64,
    pub min_reviews: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_rating: 4.0,
            min_reviews: 10,
        }
    }
}

/// Keep ratings ≥ `min_rating`, then keep users with ≥ `min_reviews` of
/// the surviving records. Record order is preserved.
pub fn preprocess(
    records: &[InteractionRecord],
    config: &PreprocessConfig,
) -> (Vec<InteractionRecord>, CorpusStats) {
    let liked: Vec<&InteractionRecord> = records
        .iter()
        .filter(|r| r.rating >= config.min_rating)
        .collect();
    let mut per_user: HashMap<u64, usize> = HashMap::new();
    for r in &liked {
        *per_user.entry(r.user_id).or_default() += 1;
    }
    let kept: Vec<InteractionRecord> = liked
        .into_iter()
        .filter(|r| per_user[&r.user_id] >= config.min_reviews)
        .cloned()
        .collect();
    let stats = corpus_stats(&kept);
    (kept, stats)
}

/// Dense indices for raw item ids, in ascending raw-id order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ItemVocab {
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl ItemVocab {
    pub fn from_records(records: &[InteractionRecord]) -> Self {
        let mut ids: Vec<u64> = records.iter().map(|r| r.item_id).collect();
        ids.sort_unstable();
        ids.dedup();
        Self::from_ids(ids).expect("deduplicated")
    }

    /// Line order is the dense index; ids must be unique.
    pub fn from_ids(ids: Vec<u64>) -> Result<Self> {
        let index: HashMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        if index.len() != ids.len() {
            return Err(DrError::input("duplicate item id in vocabulary"));
        }
        Ok(Self { ids, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn raw_id(&self, index: usize) -> u64 {
        self.ids[index]
    }

    pub fn index_of(&self, raw: u64) -> Option<usize> {
        self.index.get(&raw).copied()
    }
}

/// One user's items in timestamp order (ties keep input order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserHistory {
    pub user_id: u64,
    pub items: Vec<usize>,
    pub timestamps: Vec<u64>,
}

/// Group records by user (ascending user id) and order each history by time.
/// Items missing from `vocab` are dropped.
pub fn user_histories(records: &[InteractionRecord], vocab: &ItemVocab) -> Vec<UserHistory> {
    let mut grouped: BTreeMap<u64, Vec<(u64, usize)>> = BTreeMap::new();
    for r in records {
        if let Some(i) = vocab.index_of(r.item_id) {
            grouped.entry(r.user_id).or_default().push((r.timestamp, i));
        }
    }
    grouped
        .into_iter()
        .map(|(user_id, mut events)| {
            events.sort_by_key(|&(t, _)| t);
            UserHistory {
                user_id,
                items: events.iter().map(|e| e.1).collect(),
                timestamps: events.iter().map(|e| e.0).collect(),
            }
        })
        .collect()
}
