//! Interaction logs: ingestion, filtering, splitting and batch sampling.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Users with fewer retained interactions than this are dropped.
pub const MIN_USER_INTERACTIONS: usize = 10;

const DATASET_MAGIC: &str = "hfgcl-dataset v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user_token: String,
    pub item_token: String,
    pub rating: Option<f64>,
    pub timestamp: Option<i64>,
}

impl RawInteraction {
    pub fn implicit(user: impl Into<String>, item: impl Into<String>) -> Self {
        Self {
            user_token: user.into(),
            item_token: item.into(),
            rating: None,
            timestamp: None,
        }
    }

    pub fn rated(user: impl Into<String>, item: impl Into<String>, rating: f64) -> Self {
        Self {
            rating: Some(rating),
            ..Self::implicit(user, item)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Tsv,
}

impl InputFormat {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => InputFormat::Tsv,
            _ => InputFormat::Csv,
        }
    }

    fn delimiter(self) -> u8 {
        match self {
            InputFormat::Csv => b',',
            InputFormat::Tsv => b'\t',
        }
    }
}

/// Parses a delimited log with header `user,item[,rating][,timestamp]`.
pub fn read_raw<R: Read>(reader: R, format: InputFormat) -> Result<Vec<RawInteraction>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(user_col), Some(item_col)) = (col("user"), col("item")) else {
        return Err(Error::Parse {
            record: 0,
            message: format!("header must start with `user` and `item`, found {headers:?}"),
        });
    };
    let rating_col = col("rating");
    let ts_col = col("timestamp");

    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let record = n as u64 + 1;
        let field = |c: usize| {
            rec.get(c).ok_or_else(|| Error::Parse {
                record,
                message: format!("missing column {c}"),
            })
        };
        let rating = match rating_col {
            Some(c) => Some(field(c)?.parse::<f64>().map_err(|e| Error::Parse {
                record,
                message: format!("rating: {e}"),
            })?),
            None => None,
        };
        let timestamp = match ts_col {
            Some(c) => Some(field(c)?.parse::<i64>().map_err(|e| Error::Parse {
                record,
                message: format!("timestamp: {e}"),
            })?),
            None => None,
        };
        out.push(RawInteraction {
            user_token: field(user_col)?.to_string(),
            item_token: field(item_col)?.to_string(),
            rating,
            timestamp,
        });
    }
    Ok(out)
}

/// Writes interactions in the same delimited layout `read_raw` accepts.
pub fn write_raw<W: Write>(writer: W, rows: &[RawInteraction], format: InputFormat) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(format.delimiter())
        .from_writer(writer);
    let with_rating = rows.iter().any(|r| r.rating.is_some());
    let with_ts = rows.iter().any(|r| r.timestamp.is_some());
    let mut header = vec!["user", "item"];
    if with_rating {
        header.push("rating");
    }
    if with_ts {
        header.push("timestamp");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.user_token.clone(), r.item_token.clone()];
        if with_rating {
            rec.push(r.rating.map(|x| x.to_string()).unwrap_or_default());
        }
        if with_ts {
            rec.push(r.timestamp.map(|x| x.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub type Edge = (u32, u32);

/// De-duplicated implicit feedback with contiguous ids and three splits.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    num_users: usize,
    num_items: usize,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    train: Vec<Edge>,
    valid: Vec<Edge>,
    test: Vec<Edge>,
    user_pos: Vec<Vec<u32>>,
    user_degree: Vec<u32>,
    item_degree: Vec<u32>,
}

/// Reads a delimited file and applies [`InteractionDataset::from_interactions`].
pub fn ingest(path: &Path, format: InputFormat, rating_threshold: Option<f64>) -> Result<InteractionDataset> {
    let file = File::open(path).map_err(|source| Error::Ingest {
        path: path.to_path_buf(),
        source,
    })?;
    let raw = read_raw(BufReader::new(file), format)?;
    InteractionDataset::from_interactions(&raw, rating_threshold)
}

impl InteractionDataset {
    /// Builds a dataset with every retained interaction in the train split.
    ///
    /// Rows rated at or below `rating_threshold` are dropped; rows without a
    /// rating are always kept. Users with fewer than
    /// [`MIN_USER_INTERACTIONS`] distinct items are removed, and items left
    /// without interactions are dropped before re-indexing.
    pub fn from_interactions(raw: &[RawInteraction], rating_threshold: Option<f64>) -> Result<Self> {
        let mut seen: HashSet<(&str, &str)> = HashSet::new();
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for r in raw {
            if let (Some(rating), Some(t)) = (r.rating, rating_threshold) {
                if rating <= t {
                    continue;
                }
            }
            let key = (r.user_token.as_str(), r.item_token.as_str());
            if seen.insert(key) {
                pairs.push(key);
            }
        }

        // Dropping a user never lowers another user's count, but keep the
        // loop honest in case item-side filters are added.
        loop {
            let mut count: HashMap<&str, usize> = HashMap::new();
            for (u, _) in &pairs {
                *count.entry(u).or_default() += 1;
            }
            let before = pairs.len();
            pairs.retain(|(u, _)| count[u] >= MIN_USER_INTERACTIONS);
            if pairs.len() == before {
                break;
            }
        }
        if pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }

        let mut user_index: HashMap<&str, u32> = HashMap::new();
        let mut item_index: HashMap<&str, u32> = HashMap::new();
        let mut user_ids = Vec::new();
        let mut item_ids = Vec::new();
        let mut edges = Vec::with_capacity(pairs.len());
        for (u, i) in pairs {
            let ui = *user_index.entry(u).or_insert_with(|| {
                user_ids.push(u.to_string());
                (user_ids.len() - 1) as u32
            });
            let ii = *item_index.entry(i).or_insert_with(|| {
                item_ids.push(i.to_string());
                (item_ids.len() - 1) as u32
            });
            edges.push((ui, ii));
        }
        Self::from_parts(user_ids, item_ids, edges, Vec::new(), Vec::new())
    }

    /// Assembles a dataset from already-indexed splits, checking every invariant.
    pub fn from_parts(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        mut train: Vec<Edge>,
        mut valid: Vec<Edge>,
        mut test: Vec<Edge>,
    ) -> Result<Self> {
        let num_users = user_ids.len();
        let num_items = item_ids.len();
        for split in [&mut train, &mut valid, &mut test] {
            split.sort_unstable();
            if split.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Format("duplicate edge within a split".into()));
            }
            if let Some(&(u, i)) = split
                .iter()
                .find(|&&(u, i)| u as usize >= num_users || i as usize >= num_items)
            {
                return Err(Error::Format(format!("edge ({u}, {i}) out of range")));
            }
        }
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let train_set: HashSet<Edge> = train.iter().copied().collect();
        let valid_set: HashSet<Edge> = valid.iter().copied().collect();
        if valid.iter().chain(&test).any(|e| train_set.contains(e)) || test.iter().any(|e| valid_set.contains(e)) {
            return Err(Error::Format("splits overlap".into()));
        }

        let mut user_pos = vec![Vec::new(); num_users];
        let mut user_degree = vec![0u32; num_users];
        let mut item_degree = vec![0u32; num_items];
        for &(u, i) in &train {
            user_pos[u as usize].push(i);
            user_degree[u as usize] += 1;
            item_degree[i as usize] += 1;
        }
        if let Some(&(u, _)) = valid.iter().chain(&test).find(|(u, _)| user_degree[*u as usize] == 0) {
            return Err(Error::Format(format!("user {u} has held-out edges but no train edge")));
        }
        Ok(Self {
            num_users,
            num_items,
            user_ids,
            item_ids,
            train,
            valid,
            test,
            user_pos,
            user_degree,
            item_degree,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn train_edges(&self) -> &[Edge] {
        &self.train
    }

    pub fn valid_edges(&self) -> &[Edge] {
        &self.valid
    }

    pub fn test_edges(&self) -> &[Edge] {
        &self.test
    }

    /// Sorted train items of `user`.
    pub fn user_positives(&self, user: u32) -> &[u32] {
        &self.user_pos[user as usize]
    }

    pub fn user_degree(&self) -> &[u32] {
        &self.user_degree
    }

    pub fn item_degree(&self) -> &[u32] {
        &self.item_degree
    }

    pub fn is_train_positive(&self, user: u32, item: u32) -> bool {
        self.user_pos[user as usize].binary_search(&item).is_ok()
    }

    /// All retained edges, sorted.
    pub fn all_edges(&self) -> Vec<Edge> {
        let mut all: Vec<Edge> = self.train.iter().chain(&self.valid).chain(&self.test).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn stats(&self) -> DatasetStats {
        let interactions = self.train.len() + self.valid.len() + self.test.len();
        DatasetStats {
            users: self.num_users,
            items: self.num_items,
            interactions,
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
            density: interactions as f64 / (self.num_users as f64 * self.num_items as f64),
        }
    }

    /// Per-user stratified random split of all retained edges.
    ///
    /// Each user's items are shuffled with a single seeded stream (users are
    /// visited in index order); `round(n * valid)` go to validation,
    /// `round(n * test)` to test and the rest to train. At least one train
    /// edge per user is guaranteed.
    pub fn split(&self, ratios: SplitRatios, seed: u64) -> Result<Self> {
        ratios.validate()?;
        let mut per_user: Vec<Vec<u32>> = vec![Vec::new(); self.num_users];
        for (u, i) in self.all_edges() {
            per_user[u as usize].push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (u, items) in per_user.iter_mut().enumerate() {
            let n = items.len();
            if n == 0 {
                continue;
            }
            items.shuffle(&mut rng);
            let mut n_test = (n as f64 * ratios.test).round() as usize;
            let mut n_valid = (n as f64 * ratios.valid).round() as usize;
            while n_test + n_valid >= n {
                if n_valid > 0 && n_valid >= n_test {
                    n_valid -= 1;
                } else {
                    n_test -= 1;
                }
            }
            let u = u as u32;
            test.extend(items[..n_test].iter().map(|&i| (u, i)));
            valid.extend(items[n_test..n_test + n_valid].iter().map(|&i| (u, i)));
            train.extend(items[n_test + n_valid..].iter().map(|&i| (u, i)));
        }
        Self::from_parts(self.user_ids.clone(), self.item_ids.clone(), train, valid, test)
    }

    /// Draws `batch_size` BPR triplets.
    ///
    /// Positive pairs are uniform over train edges; each negative is uniform
    /// over the items the user has not interacted with in train.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<TrainBatch> {
        if self.train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let max_retries = 64 * self.num_items + 1000;
        let mut batch = TrainBatch::with_capacity(batch_size);
        for _ in 0..batch_size {
            let (u, i) = self.train[rng.random_range(0..self.train.len())];
            let pos = &self.user_pos[u as usize];
            if pos.len() >= self.num_items {
                return Err(Error::SamplingStall { user: u });
            }
            let mut tries = 0;
            let j = loop {
                let j = rng.random_range(0..self.num_items as u32);
                if pos.binary_search(&j).is_err() {
                    break j;
                }
                tries += 1;
                if tries > max_retries {
                    return Err(Error::SamplingStall { user: u });
                }
            };
            batch.users.push(u);
            batch.pos_items.push(i);
            batch.neg_items.push(j);
        }
        Ok(batch)
    }

    /// Canonical serialization: a magic line followed by one JSON document.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{DATASET_MAGIC}")?;
        let repr = DatasetRepr {
            num_users: self.num_users,
            num_items: self.num_items,
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
            train: self.train.clone(),
            valid: self.valid.clone(),
            test: self.test.clone(),
        };
        serde_json::to_writer(&mut w, &repr)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = String::new();
        r.read_line(&mut magic)?;
        if magic.trim_end() != DATASET_MAGIC {
            return Err(Error::Format(format!("expected `{DATASET_MAGIC}` header, found `{}`", magic.trim_end())));
        }
        let repr: DatasetRepr = serde_json::from_reader(r)?;
        if repr.user_ids.len() != repr.num_users || repr.item_ids.len() != repr.num_items {
            return Err(Error::Format("id map size disagrees with header counts".into()));
        }
        Self::from_parts(repr.user_ids, repr.item_ids, repr.train, repr.valid, repr.test)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| Error::Ingest {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_from(file)
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    num_users: usize,
    num_items: usize,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    train: Vec<Edge>,
    valid: Vec<Edge>,
    test: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const fn new(train: f64, valid: f64, test: f64) -> Self {
        Self { train, valid, test }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.valid, self.test];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0) || self.train <= 0.0 {
            return Err(Error::Config(format!("split ratios must be non-negative with train > 0, got {self:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {self:?}")));
        }
        Ok(())
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self::new(0.8, 0.1, 0.1)
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = Error;

    /// Parses `train,valid,test`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad split `{s}`: {e}")))?;
        let [train, valid, test] = parts[..] else {
            return Err(Error::Config(format!("split needs three ratios, got `{s}`")));
        };
        let r = Self::new(train, valid, test);
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub density: f64,
}

/// Parallel lists of BPR triplets `(user, positive, negative)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainBatch {
    pub users: Vec<u32>,
    pub pos_items: Vec<u32>,
    pub neg_items: Vec<u32>,
}

impl TrainBatch {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            users: Vec::with_capacity(n),
            pos_items: Vec::with_capacity(n),
            neg_items: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}
