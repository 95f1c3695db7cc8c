//! Core domain types and dataset ingestion.
//!
//! Three UTF-8 files describe a dataset:
//!
//! * `images.jsonl`: one object per line, `{"image_id", "features", "concepts"}`;
//!   unknown keys are ignored.
//! * `favorites.csv`: header `user_id,image_id`, one favorite edge per row.
//! * `traits.csv`: header `user_id,O,C,E,A,N`, real-valued scores in `[-4, 4]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound of a trait score.
pub const TRAIT_MIN: f64 = -4.0;
/// Upper bound of a trait score.
pub const TRAIT_MAX: f64 = 4.0;

pub const IMAGES_FILE: &str = "images.jsonl";
pub const FAVORITES_FILE: &str = "favorites.csv";
pub const TRAITS_FILE: &str = "traits.csv";

/// One of the Big-Five personality dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Trait {
    #[serde(rename = "O")]
    Openness,
    #[serde(rename = "C")]
    Conscientiousness,
    #[serde(rename = "E")]
    Extraversion,
    #[serde(rename = "A")]
    Agreeableness,
    #[serde(rename = "N")]
    Neuroticism,
}

impl Trait {
    /// Canonical order O, C, E, A, N.
    pub const ALL: [Trait; 5] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Neuroticism,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Trait::Openness => "O",
            Trait::Conscientiousness => "C",
            Trait::Extraversion => "E",
            Trait::Agreeableness => "A",
            Trait::Neuroticism => "N",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Trait::Openness => "Openness",
            Trait::Conscientiousness => "Conscientiousness",
            Trait::Extraversion => "Extraversion",
            Trait::Agreeableness => "Agreeableness",
            Trait::Neuroticism => "Neuroticism",
        }
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Trait {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Trait::ALL
            .into_iter()
            .find(|t| t.code().eq_ignore_ascii_case(s) || t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown trait `{s}` (expected one of O, C, E, A, N)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub features: Vec<f64>,
    #[serde(rename = "concepts")]
    pub detected_concepts: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub user_id: String,
    /// Favorites in file order, without duplicates.
    pub favorite_image_ids: Vec<String>,
    pub traits: BTreeMap<Trait, f64>,
}

/// Users, images and the favorite relation between them.
///
/// Immutable once built; shared read access needs no synchronization.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: BTreeMap<String, ImageRecord>,
    pub users: BTreeMap<String, UserRecord>,
    pub feature_dim: usize,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}:{line}: malformed line: {reason}")]
    Malformed {
        file: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{file}:{line}: dangling reference: user `{user}` favorites unknown image `{image}`")]
    DanglingReference {
        file: PathBuf,
        line: usize,
        user: String,
        image: String,
    },
    #[error("{file}:{line}: trait out of range: user `{user}` has {trait_}={value} outside [-4, 4]")]
    TraitOutOfRange {
        file: PathBuf,
        line: usize,
        user: String,
        trait_: Trait,
        value: f64,
    },
    #[error("{file}:{line}: inconsistent feature dimension: image `{image}` has {found} features, expected {expected}")]
    FeatureDimension {
        file: PathBuf,
        line: usize,
        image: String,
        expected: usize,
        found: usize,
    },
    #[error("user `{user}` has favorites but no trait scores")]
    MissingTraits { user: String },
    #[error("dataset failed validation: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Dataset {
    /// Returns the image records of a user's favorites, in favorite order.
    pub fn favorites_of<'a>(&'a self, user: &'a UserRecord) -> impl Iterator<Item = &'a ImageRecord> + 'a {
        user.favorite_image_ids.iter().filter_map(move |id| self.images.get(id))
    }

    /// Labels of one trait keyed by user id.
    pub fn labels(&self, trait_: Trait) -> BTreeMap<String, f64> {
        self.users
            .iter()
            .filter_map(|(id, u)| u.traits.get(&trait_).map(|v| (id.clone(), *v)))
            .collect()
    }
}

/// Checks every dataset invariant and describes each violation.
///
/// An empty result means the dataset is well formed.
pub fn validate_dataset(ds: &Dataset) -> Vec<String> {
    let mut violations = Vec::new();
    for (key, image) in &ds.images {
        if key != &image.image_id {
            violations.push(format!("image `{key}` is stored under a different id `{}`", image.image_id));
        }
        if image.features.len() != ds.feature_dim {
            violations.push(format!(
                "image `{key}` has {} features, expected {}",
                image.features.len(),
                ds.feature_dim
            ));
        }
        if image.features.iter().any(|v| !v.is_finite()) {
            violations.push(format!("image `{key}` has non-finite feature values"));
        }
        if image.detected_concepts.is_empty() {
            violations.push(format!("image `{key}` has no concepts"));
        }
    }
    for (key, user) in &ds.users {
        if key != &user.user_id {
            violations.push(format!("user `{key}` is stored under a different id `{}`", user.user_id));
        }
        if user.favorite_image_ids.is_empty() {
            violations.push(format!("user `{key}` has no favorites"));
        }
        for image in &user.favorite_image_ids {
            if !ds.images.contains_key(image) {
                violations.push(format!("user `{key}` favorites unknown image `{image}`"));
            }
        }
        for t in Trait::ALL {
            match user.traits.get(&t) {
                None => violations.push(format!("user `{key}` is missing trait {t}")),
                Some(v) if !v.is_finite() || !(TRAIT_MIN..=TRAIT_MAX).contains(v) => {
                    violations.push(format!("user `{key}` has {t}={v} outside [-4, 4]"))
                }
                Some(_) => {}
            }
        }
    }
    violations
}

#[derive(Deserialize)]
struct ImageLine {
    image_id: String,
    features: Vec<f64>,
    concepts: BTreeSet<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(file: &Path, line: usize, reason: impl Into<String>) -> DataError {
    DataError::Malformed {
        file: file.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn load_images(path: &Path) -> Result<(BTreeMap<String, ImageRecord>, usize), DataError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut images = BTreeMap::new();
    let mut dim = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: ImageLine =
            serde_json::from_str(raw).map_err(|e| malformed(path, line, e.to_string()))?;
        if parsed.features.iter().any(|v| !v.is_finite()) {
            return Err(malformed(path, line, "non-finite feature value"));
        }
        if parsed.concepts.is_empty() {
            return Err(malformed(path, line, "image has no concepts"));
        }
        let expected = *dim.get_or_insert(parsed.features.len());
        if parsed.features.len() != expected {
            return Err(DataError::FeatureDimension {
                file: path.to_path_buf(),
                line,
                image: parsed.image_id,
                expected,
                found: parsed.features.len(),
            });
        }
        if images.contains_key(&parsed.image_id) {
            return Err(malformed(path, line, format!("duplicate image_id `{}`", parsed.image_id)));
        }
        images.insert(
            parsed.image_id.clone(),
            ImageRecord {
                image_id: parsed.image_id,
                features: parsed.features,
                detected_concepts: parsed.concepts,
            },
        );
    }
    Ok((images, dim.unwrap_or(0)))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, DataError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| malformed(path, 1, format!("missing column `{name}`")))
}

fn load_favorites(
    path: &Path,
    images: &BTreeMap<String, ImageRecord>,
) -> Result<BTreeMap<String, Vec<String>>, DataError> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(|e| malformed(path, 1, e.to_string()))?.clone();
    let user_col = column(&headers, "user_id", path)?;
    let image_col = column(&headers, "image_id", path)?;
    let mut favorites: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| malformed(path, line, e.to_string()))?;
        let (Some(user), Some(image)) = (record.get(user_col), record.get(image_col)) else {
            return Err(malformed(path, line, "expected user_id,image_id"));
        };
        if user.is_empty() || image.is_empty() {
            return Err(malformed(path, line, "empty identifier"));
        }
        if !images.contains_key(image) {
            return Err(DataError::DanglingReference {
                file: path.to_path_buf(),
                line,
                user: user.to_string(),
                image: image.to_string(),
            });
        }
        let list = favorites.entry(user.to_string()).or_default();
        if !list.iter().any(|f| f == image) {
            list.push(image.to_string());
        }
    }
    Ok(favorites)
}

fn load_traits(path: &Path) -> Result<BTreeMap<String, BTreeMap<Trait, f64>>, DataError> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(|e| malformed(path, 1, e.to_string()))?.clone();
    let user_col = column(&headers, "user_id", path)?;
    let trait_cols = Trait::ALL
        .iter()
        .map(|t| column(&headers, t.code(), path).map(|c| (*t, c)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| malformed(path, line, e.to_string()))?;
        let user = record
            .get(user_col)
            .filter(|u| !u.is_empty())
            .ok_or_else(|| malformed(path, line, "missing user_id"))?;
        let mut scores = BTreeMap::new();
        for &(t, col) in &trait_cols {
            let cell = record.get(col).unwrap_or("");
            if cell.is_empty() {
                return Err(malformed(path, line, format!("missing score for trait {t}")));
            }
            let value: f64 = cell
                .parse()
                .map_err(|_| malformed(path, line, format!("trait {t}: `{cell}` is not a number")))?;
            if !value.is_finite() || !(TRAIT_MIN..=TRAIT_MAX).contains(&value) {
                return Err(DataError::TraitOutOfRange {
                    file: path.to_path_buf(),
                    line,
                    user: user.to_string(),
                    trait_: t,
                    value,
                });
            }
            scores.insert(t, value);
        }
        if out.insert(user.to_string(), scores).is_some() {
            return Err(malformed(path, line, format!("duplicate user `{user}`")));
        }
    }
    Ok(out)
}

/// Loads and validates a dataset from its three files.
pub fn load_dataset(images_path: &Path, favorites_path: &Path, traits_path: &Path) -> Result<Dataset, DataError> {
    let (images, feature_dim) = load_images(images_path)?;
    let favorites = load_favorites(favorites_path, &images)?;
    let mut traits = load_traits(traits_path)?;

    let mut users = BTreeMap::new();
    for (user_id, favorite_image_ids) in favorites {
        let scores = traits
            .remove(&user_id)
            .ok_or_else(|| DataError::MissingTraits { user: user_id.clone() })?;
        users.insert(
            user_id.clone(),
            UserRecord {
                user_id,
                favorite_image_ids,
                traits: scores,
            },
        );
    }
    // Users with scores but no favorites are kept so validation can name them.
    for (user_id, scores) in traits {
        users.insert(
            user_id.clone(),
            UserRecord {
                user_id,
                favorite_image_ids: Vec::new(),
                traits: scores,
            },
        );
    }

    let ds = Dataset {
        images,
        users,
        feature_dim,
    };
    let violations = validate_dataset(&ds);
    if violations.is_empty() {
        Ok(ds)
    } else {
        Err(DataError::Invalid(violations))
    }
}

/// Loads `images.jsonl`, `favorites.csv` and `traits.csv` from one directory.
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset, DataError> {
    load_dataset(&dir.join(IMAGES_FILE), &dir.join(FAVORITES_FILE), &dir.join(TRAITS_FILE))
}

pub fn images_jsonl(ds: &Dataset) -> String {
    let mut out = String::new();
    for image in ds.images.values() {
        out.push_str(&serde_json::to_string(image).expect("image records serialize"));
        out.push('\n');
    }
    out
}

pub fn favorites_csv(ds: &Dataset) -> String {
    let mut out = String::from("user_id,image_id\n");
    for user in ds.users.values() {
        for image in &user.favorite_image_ids {
            out.push_str(&format!("{},{}\n", user.user_id, image));
        }
    }
    out
}

pub fn traits_csv(ds: &Dataset) -> String {
    let mut out = String::from("user_id,O,C,E,A,N\n");
    for user in ds.users.values() {
        out.push_str(&user.user_id);
        for t in Trait::ALL {
            out.push_str(&format!(",{}", user.traits.get(&t).copied().unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}

/// Writes the dataset's three files into `dir`, each atomically.
pub fn save_dataset_dir(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    for (name, body) in [
        (IMAGES_FILE, images_jsonl(ds)),
        (FAVORITES_FILE, favorites_csv(ds)),
        (TRAITS_FILE, traits_csv(ds)),
    ] {
        let path = dir.join(name);
        crate::io::write_atomic(&path, body.as_bytes()).map_err(io_err(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, images: &str, favorites: &str, traits: &str) {
        std::fs::write(dir.join(IMAGES_FILE), images).unwrap();
        std::fs::write(dir.join(FAVORITES_FILE), favorites).unwrap();
        std::fs::write(dir.join(TRAITS_FILE), traits).unwrap();
    }

    fn image_line(id: &str, dim: usize, concepts: &[&str]) -> String {
        serde_json::json!({"image_id": id, "features": vec![0.25; dim], "concepts": concepts}).to_string()
    }

    #[test]
    fn minimal_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            &(image_line("img1", 82, &["lakeside"]) + "\n"),
            "user_id,image_id\nu1,img1\n",
            "user_id,O,C,E,A,N\nu1,0.0,0.0,0.0,0.0,0.0\n",
        );
        let ds = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(ds.users.len(), 1);
        assert_eq!(ds.images.len(), 1);
        assert_eq!(ds.feature_dim, 82);
        assert!(validate_dataset(&ds).is_empty());
    }

    #[test]
    fn unknown_json_keys_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "{\"image_id\":\"a\",\"features\":[1.0],\"concepts\":[\"x\"],\"url\":\"http://x\"}\n",
            "user_id,image_id\nu,a\n",
            "user_id,O,C,E,A,N\nu,1,2,3,4,-4\n",
        );
        let ds = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(ds.users["u"].traits[&Trait::Agreeableness], 4.0);
    }

    #[test]
    fn trait_out_of_range_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            &(image_line("img1", 3, &["a"]) + "\n"),
            "user_id,image_id\nu1,img1\n",
            "user_id,O,C,E,A,N\nu1,4.5,0,0,0,0\n",
        );
        let err = load_dataset_dir(dir.path()).unwrap_err();
        assert!(matches!(err, DataError::TraitOutOfRange { line: 2, .. }));
        assert!(err.to_string().contains("trait out of range"));
    }

    #[test]
    fn dangling_favorite_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            &(image_line("img1", 3, &["a"]) + "\n"),
            "user_id,image_id\nu1,img1\nu1,ghost\n",
            "user_id,O,C,E,A,N\nu1,0,0,0,0,0\n",
        );
        let err = load_dataset_dir(dir.path()).unwrap_err();
        assert!(matches!(err, DataError::DanglingReference { line: 3, .. }));
        assert!(err.to_string().contains("dangling reference"));
    }

    #[test]
    fn inconsistent_dimension_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let images = format!("{}\n{}\n", image_line("a", 3, &["x"]), image_line("b", 2, &["x"]));
        write(dir.path(), &images, "user_id,image_id\n", "user_id,O,C,E,A,N\n");
        let err = load_dataset_dir(dir.path()).unwrap_err();
        assert!(matches!(err, DataError::FeatureDimension { line: 2, expected: 3, found: 2, .. }));
    }

    #[test]
    fn malformed_json_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let images = format!("{}\n{{not json\n", image_line("a", 3, &["x"]));
        write(dir.path(), &images, "user_id,image_id\n", "user_id,O,C,E,A,N\n");
        let err = load_dataset_dir(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("images.jsonl:2"), "{msg}");
    }

    #[test]
    fn missing_trait_row_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            &(image_line("img1", 3, &["a"]) + "\n"),
            "user_id,image_id\nu1,img1\n",
            "user_id,O,C,E,A,N\n",
        );
        assert!(matches!(
            load_dataset_dir(dir.path()).unwrap_err(),
            DataError::MissingTraits { .. }
        ));
    }

    #[test]
    fn empty_trait_cell_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            &(image_line("img1", 3, &["a"]) + "\n"),
            "user_id,image_id\nu1,img1\n",
            "user_id,O,C,E,A,N\nu1,0,,0,0,0\n",
        );
        assert!(matches!(
            load_dataset_dir(dir.path()).unwrap_err(),
            DataError::Malformed { line: 2, .. }
        ));
    }

    fn tiny() -> Dataset {
        let image = ImageRecord {
            image_id: "i".into(),
            features: vec![1.0, 2.0],
            detected_concepts: ["c".to_string()].into(),
        };
        let user = UserRecord {
            user_id: "u".into(),
            favorite_image_ids: vec!["i".into()],
            traits: Trait::ALL.iter().map(|t| (*t, 0.5)).collect(),
        };
        Dataset {
            images: [("i".to_string(), image)].into(),
            users: [("u".to_string(), user)].into(),
            feature_dim: 2,
        }
    }

    #[test]
    fn validate_reports_short_feature_vector() {
        let mut ds = tiny();
        assert!(validate_dataset(&ds).is_empty());
        ds.images.get_mut("i").unwrap().features.pop();
        let v = validate_dataset(&ds);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("`i`"));
    }

    #[test]
    fn validate_reports_empty_favorites() {
        let mut ds = tiny();
        ds.users.get_mut("u").unwrap().favorite_image_ids.clear();
        let v = validate_dataset(&ds);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("`u`"));
    }

    #[test]
    fn trait_parsing_accepts_codes_and_names() {
        assert_eq!("e".parse::<Trait>().unwrap(), Trait::Extraversion);
        assert_eq!("Neuroticism".parse::<Trait>().unwrap(), Trait::Neuroticism);
        assert!("X".parse::<Trait>().is_err());
    }
}
