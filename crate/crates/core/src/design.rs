//! Measurement blueprint and observed ratings.
//!
//! Files use 1-based indices for cases, theta-groups, threshold groups,
//! learners and raters. Everything in memory is 0-based.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of ordinal rating categories.
pub const N_CATEGORIES: usize = 5;
/// Number of category boundaries.
pub const N_BOUNDARIES: usize = N_CATEGORIES - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub id: String,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemSpec {
    pub id: String,
    pub case: usize,
    pub theta_group: usize,
    pub threshold_group: usize,
    /// Unit-norm loading vector of length `n_dims`.
    pub loading: Vec<f64>,
    pub universal: bool,
}

/// Full measurement design: dimensions, cases, theta-groups and items.
#[derive(Debug, Clone, PartialEq)]
pub struct Blueprint {
    n_dims: usize,
    cases: Vec<Descriptor>,
    theta_groups: Vec<Descriptor>,
    items: Vec<ItemSpec>,
    n_threshold_groups: usize,
    item_index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ItemFile {
    id: String,
    case: usize,
    theta_group: usize,
    threshold_group: usize,
    loading: Vec<f64>,
    #[serde(default)]
    universal: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlueprintFile {
    dims: usize,
    categories: usize,
    cases: Vec<Descriptor>,
    theta_groups: Vec<Descriptor>,
    items: Vec<ItemFile>,
}

impl Blueprint {
    /// Validates a design and unit-normalizes every loading.
    pub fn new(
        n_dims: usize,
        cases: Vec<Descriptor>,
        theta_groups: Vec<Descriptor>,
        mut items: Vec<ItemSpec>,
    ) -> Result<Self> {
        let err = |m: String| Err(Error::Blueprint(m));
        if n_dims == 0 {
            return err("dims must be at least 1".into());
        }
        if cases.is_empty() {
            return err("at least one case is required".into());
        }
        if theta_groups.is_empty() {
            return err("at least one theta-group is required".into());
        }
        if items.is_empty() {
            return err("at least one item is required".into());
        }

        let mut item_index = HashMap::with_capacity(items.len());
        let mut n_threshold_groups = 0;
        for (l, item) in items.iter_mut().enumerate() {
            if item_index.insert(item.id.clone(), l).is_some() {
                return err(format!("duplicate item id '{}'", item.id));
            }
            if item.case >= cases.len() {
                return err(format!("item '{}': case index out of range", item.id));
            }
            if item.theta_group >= theta_groups.len() {
                return err(format!("item '{}': theta_group index out of range", item.id));
            }
            if item.loading.len() != n_dims {
                return err(format!(
                    "item '{}': loading has {} entries, expected {}",
                    item.id,
                    item.loading.len(),
                    n_dims
                ));
            }
            if item.loading.iter().any(|v| !v.is_finite()) {
                return err(format!("item '{}': non-finite loading", item.id));
            }
            let norm = item.loading.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return err(format!("item '{}': empty loading", item.id));
            }
            if (norm - 1.0).abs() > 1e-6 {
                log::info!("item '{}': loading renormalized (norm was {:.6})", item.id, norm);
            }
            item.loading.iter_mut().for_each(|v| *v /= norm);
            n_threshold_groups = n_threshold_groups.max(item.threshold_group + 1);
        }

        for p in 0..n_dims {
            if items.iter().all(|it| it.loading[p] == 0.0) {
                return err(format!("dimension uninformed: dimension {} has no loading", p + 1));
            }
        }

        // Threshold groups spanning several cases must consist of universal items only.
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_threshold_groups];
        for (l, item) in items.iter().enumerate() {
            members[item.threshold_group].push(l);
        }
        for (t, ls) in members.iter().enumerate() {
            if ls.is_empty() {
                log::warn!("threshold group {} is not used by any item", t + 1);
                continue;
            }
            let case_set: HashSet<usize> = ls.iter().map(|&l| items[l].case).collect();
            if case_set.len() > 1 && ls.iter().any(|&l| !items[l].universal) {
                return err(format!(
                    "threshold group {} is shared across cases by a non-universal item",
                    t + 1
                ));
            }
            if ls.iter().any(|&l| items[l].universal) && ls.iter().any(|&l| !items[l].universal) {
                return err(format!(
                    "threshold group {} mixes universal and non-universal items",
                    t + 1
                ));
            }
        }

        Ok(Self {
            n_dims,
            cases,
            theta_groups,
            items,
            n_threshold_groups,
            item_index,
        })
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn n_categories(&self) -> usize {
        N_CATEGORIES
    }

    pub fn n_cases(&self) -> usize {
        self.cases.len()
    }

    pub fn n_groups(&self) -> usize {
        self.theta_groups.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_threshold_groups(&self) -> usize {
        self.n_threshold_groups
    }

    pub fn cases(&self) -> &[Descriptor] {
        &self.cases
    }

    pub fn theta_groups(&self) -> &[Descriptor] {
        &self.theta_groups
    }

    pub fn items(&self) -> &[ItemSpec] {
        &self.items
    }

    pub fn item(&self, l: usize) -> &ItemSpec {
        &self.items[l]
    }

    pub fn item_by_id(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    /// Number of items in case `q` with a nonzero loading on dimension `p`.
    pub fn coverage(&self, q: usize, p: usize) -> usize {
        self.items
            .iter()
            .filter(|it| it.case == q && it.loading[p].abs() > 0.0)
            .count()
    }

    pub fn from_json_str(s: &str, path: &Path) -> Result<Self> {
        let file: BlueprintFile = serde_json::from_str(s).map_err(|e| Error::parse(path, e))?;
        if file.categories != N_CATEGORIES {
            return Err(Error::Blueprint(format!(
                "categories must be {N_CATEGORIES}, found {}",
                file.categories
            )));
        }
        let n_cases = file.cases.len();
        let n_groups = file.theta_groups.len();
        let mut items = Vec::with_capacity(file.items.len());
        for it in file.items {
            let one_based = |v: usize, hi: usize, what: &str| -> Result<usize> {
                if v == 0 || v > hi {
                    Err(Error::Blueprint(format!(
                        "item '{}': {what} index {v} outside 1..={hi}",
                        it.id
                    )))
                } else {
                    Ok(v - 1)
                }
            };
            let case = one_based(it.case, n_cases, "case")?;
            let theta_group = one_based(it.theta_group, n_groups, "theta_group")?;
            let threshold_group = one_based(it.threshold_group, usize::MAX, "threshold_group")?;
            items.push(ItemSpec {
                id: it.id,
                case,
                theta_group,
                threshold_group,
                loading: it.loading,
                universal: it.universal,
            });
        }
        Self::new(file.dims, file.cases, file.theta_groups, items)
    }

    pub fn to_json_string(&self) -> String {
        let file = BlueprintFile {
            dims: self.n_dims,
            categories: N_CATEGORIES,
            cases: self.cases.clone(),
            theta_groups: self.theta_groups.clone(),
            items: self
                .items
                .iter()
                .map(|it| ItemFile {
                    id: it.id.clone(),
                    case: it.case + 1,
                    theta_group: it.theta_group + 1,
                    threshold_group: it.threshold_group + 1,
                    loading: it.loading.clone(),
                    universal: it.universal,
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("blueprint serializes");
        s.push('\n');
        s
    }
}

pub fn load_blueprint(path: impl AsRef<Path>) -> Result<Blueprint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Blueprint::from_json_str(&text, path)
}

pub fn write_blueprint(path: impl AsRef<Path>, bp: &Blueprint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bp.to_json_string()).map_err(|e| Error::io(path, e))
}

/// One (learner, rater, item) observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatingRecord {
    pub learner: usize,
    pub rater: usize,
    pub item: usize,
    pub applicable: bool,
    /// Category in `1..=5`; present iff `applicable`.
    pub rating: Option<u8>,
}

/// Applicable records sharing one (learner, item) latent performance state.
#[derive(Debug, Clone)]
pub struct LatentUnit {
    pub learner: usize,
    pub item: usize,
    records: Range<usize>,
}

/// Validated ratings with the indices used by likelihood sweeps.
#[derive(Debug, Clone)]
pub struct RatingsDataset {
    records: Vec<RatingRecord>,
    n_learners: usize,
    n_raters: usize,
    n_items: usize,
    n_groups: usize,
    units: Vec<LatentUnit>,
    unit_records: Vec<usize>,
    learner_units: Vec<Range<usize>>,
    // (applicable, gated) record counts per (case, theta-group) cell
    gate_counts: Vec<(u64, u64)>,
}

impl RatingsDataset {
    /// Builds a dataset; learner and rater counts may exceed the largest
    /// index seen (unrated learners keep prior-only competencies).
    pub fn new(records: Vec<RatingRecord>, n_learners: usize, n_raters: usize, bp: &Blueprint) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for (row, r) in records.iter().enumerate() {
            let fail = |m: String| {
                Err(Error::Ratings {
                    row: row + 1,
                    message: m,
                })
            };
            if r.learner >= n_learners || r.rater >= n_raters || r.item >= bp.n_items() {
                return fail("index outside design bounds".into());
            }
            match (r.applicable, r.rating) {
                (true, None) => return fail("applicable record without rating".into()),
                (false, Some(_)) => return fail("rating present with applicable=0".into()),
                (true, Some(y)) if !(1..=N_CATEGORIES as u8).contains(&y) => {
                    return fail(format!("rating {y} outside 1..5"))
                }
                _ => {}
            }
            if !seen.insert((r.learner, r.rater, r.item)) {
                return fail("duplicate (learner, rater, item) triple".into());
            }
        }
        Ok(Self::build(records, n_learners, n_raters, bp))
    }

    fn build(records: Vec<RatingRecord>, n_learners: usize, n_raters: usize, bp: &Blueprint) -> Self {
        let n_groups = bp.n_groups();
        let mut gate_counts = vec![(0u64, 0u64); bp.n_cases() * n_groups];
        for r in &records {
            let it = bp.item(r.item);
            let cell = &mut gate_counts[it.case * n_groups + it.theta_group];
            if r.applicable {
                cell.0 += 1;
            } else {
                cell.1 += 1;
            }
        }

        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by_key(|&k| (records[k].learner, records[k].item, records[k].rater));

        let mut units = Vec::new();
        let mut unit_records = Vec::new();
        let mut learner_units = vec![0..0; n_learners];
        let mut inconsistent = 0usize;
        let mut k = 0;
        while k < order.len() {
            let first = records[order[k]];
            let mut end = k;
            let start_rec = unit_records.len();
            while end < order.len()
                && records[order[end]].learner == first.learner
                && records[order[end]].item == first.item
            {
                let r = records[order[end]];
                if r.applicable != first.applicable {
                    inconsistent += 1;
                }
                if r.applicable {
                    unit_records.push(order[end]);
                }
                end += 1;
            }
            if unit_records.len() > start_rec {
                let u = units.len();
                let lu = &mut learner_units[first.learner];
                if lu.start == lu.end {
                    *lu = u..u + 1;
                } else {
                    lu.end = u + 1;
                }
                units.push(LatentUnit {
                    learner: first.learner,
                    item: first.item,
                    records: start_rec..unit_records.len(),
                });
            }
            k = end;
        }
        if inconsistent > 0 {
            log::warn!("{inconsistent} (learner, item) pairs have rater-varying applicability");
        }

        Self {
            records,
            n_learners,
            n_raters,
            n_items: bp.n_items(),
            n_groups,
            units,
            unit_records,
            learner_units,
            gate_counts,
        }
    }

    /// An empty dataset with the given learner and rater counts.
    pub fn empty(n_learners: usize, n_raters: usize, bp: &Blueprint) -> Self {
        Self::build(Vec::new(), n_learners, n_raters, bp)
    }

    pub fn records(&self) -> &[RatingRecord] {
        &self.records
    }

    pub fn n_learners(&self) -> usize {
        self.n_learners
    }

    pub fn n_raters(&self) -> usize {
        self.n_raters
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn units(&self) -> &[LatentUnit] {
        &self.units
    }

    /// Applicable record indices of a latent unit.
    pub fn unit_records(&self, unit: &LatentUnit) -> &[usize] {
        &self.unit_records[unit.records.clone()]
    }

    /// Latent units belonging to one learner.
    pub fn learner_units(&self, learner: usize) -> &[LatentUnit] {
        &self.units[self.learner_units[learner].clone()]
    }

    /// `(applicable, gated)` record counts for a (case, theta-group) cell.
    pub fn gate_counts(&self, case: usize, group: usize) -> (u64, u64) {
        self.gate_counts[case * self.n_groups + group]
    }

    /// Overwrites the stored rating of a gated record without touching its
    /// gate. Gated ratings never enter the rating likelihood, so this leaves
    /// every likelihood quantity unchanged.
    pub fn overwrite_gated_rating(&mut self, record: usize, rating: Option<u8>) -> Result<()> {
        let r = &mut self.records[record];
        if r.applicable {
            return Err(Error::Ratings {
                row: record + 1,
                message: "record is applicable".into(),
            });
        }
        r.rating = rating;
        Ok(())
    }
}

const RATINGS_HEADER: [&str; 5] = ["learner_id", "rater_id", "item_id", "applicable", "rating"];

pub fn load_ratings(path: impl AsRef<Path>, bp: &Blueprint) -> Result<RatingsDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(&text, path, bp)
}

pub fn parse_ratings(text: &str, path: &Path, bp: &Blueprint) -> Result<RatingsDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::parse(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != RATINGS_HEADER {
        return Err(Error::parse(
            path,
            format!("expected header {}", RATINGS_HEADER.join(",")),
        ));
    }
    let mut records = Vec::new();
    let (mut n_learners, mut n_raters) = (0, 0);
    for (k, row) in rdr.records().enumerate() {
        let row_no = k + 1;
        let row = row.map_err(|e| Error::parse(path, e))?;
        let fail = |m: String| Error::Ratings {
            row: row_no,
            message: m,
        };
        let id = |s: &str, what: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(fail(format!("{what} '{s}' is not a positive integer"))),
            }
        };
        let learner = id(&row[0], "learner_id")?;
        let rater = id(&row[1], "rater_id")?;
        let item = bp
            .item_by_id(&row[2])
            .ok_or_else(|| fail(format!("unknown item id '{}'", &row[2])))?;
        let applicable = match &row[3] {
            "1" => true,
            "0" => false,
            other => return Err(fail(format!("applicable must be 0 or 1, found '{other}'"))),
        };
        let rating = match &row[4] {
            "" => None,
            s => match s.parse::<u8>() {
                Ok(v) if (1..=N_CATEGORIES as u8).contains(&v) => Some(v),
                _ => return Err(fail(format!("rating '{s}' outside 1..5"))),
            },
        };
        n_learners = n_learners.max(learner + 1);
        n_raters = n_raters.max(rater + 1);
        records.push(RatingRecord {
            learner,
            rater,
            item,
            applicable,
            rating,
        });
    }
    RatingsDataset::new(records, n_learners, n_raters, bp)
}

pub fn write_ratings(path: impl AsRef<Path>, ds: &RatingsDataset, bp: &Blueprint) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(ratings_to_string(ds, bp).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn ratings_to_string(ds: &RatingsDataset, bp: &Blueprint) -> String {
    let mut out = String::with_capacity(ds.records.len() * 32);
    out.push_str(&RATINGS_HEADER.join(","));
    out.push('\n');
    for r in &ds.records {
        let rating = match (r.applicable, r.rating) {
            (true, Some(y)) => y.to_string(),
            _ => String::new(),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.learner + 1,
            r.rater + 1,
            bp.item(r.item).id,
            u8::from(r.applicable),
            rating
        ));
    }
    out
}
