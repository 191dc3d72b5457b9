//! On-disk phantom datasets.
//!
//! ```text
//! <root>/manifest.tsv                 id  role  seed
//! <root>/subjects/<id>/clean.aslt     ... one ASLT file per image
//! ```
//!
//! Subject `i` (0-based) gets id `sub-NNN` and seed `derive(master, "subject", i)`;
//! the first `train` subjects are training, then validation, then test.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use asldn_core::phantom::{self, PhantomSubject};
use asldn_core::{seed, Tensor};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, IoContext, Result};
use crate::format;

pub const MANIFEST: &str = "manifest.tsv";
pub const SUBJECTS_DIR: &str = "subjects";
/// Every file written per subject, without the `.aslt` extension.
pub const SUBJECT_FILES: [&str; 9] = [
    "clean", "gm_mask", "wm_mask", "series", "input1", "ref1", "input2", "ref2", "pgs",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Val,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "val" => Ok(Role::Val),
            "test" => Ok(Role::Test),
            _ => Err(Error::Manifest(format!("unknown role {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub id: String,
    pub role: Role,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<Entry>,
}

impl Manifest {
    /// Ids and seeds for `n` subjects split `(train, val, test)` in order.
    pub fn plan(master_seed: u64, split: (usize, usize, usize)) -> Self {
        let (tr, va, te) = split;
        let entries = (0..tr + va + te)
            .map(|i| Entry {
                id: format!("sub-{i:03}"),
                role: if i < tr {
                    Role::Train
                } else if i < tr + va {
                    Role::Val
                } else {
                    Role::Test
                },
                seed: seed::derive(master_seed, "subject", i as u64),
            })
            .collect();
        Self { entries }
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("id\trole\tseed\n");
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.id, e.role, e.seed));
        }
        s
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("id\trole\tseed") {
            return Err(Error::Manifest("missing `id\\trole\\tseed` header".into()));
        }
        let mut entries: Vec<Entry> = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, role, seed] = cols[..] else {
                return Err(Error::Manifest(format!("row {}: expected 3 columns", i + 1)));
            };
            if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
                return Err(Error::Manifest(format!("row {}: invalid id {id:?}", i + 1)));
            }
            if entries.iter().any(|e| e.id == id) {
                return Err(Error::DuplicateSubject(id.into()));
            }
            entries.push(Entry {
                id: id.into(),
                role: role.parse()?,
                seed: seed
                    .parse()
                    .map_err(|_| Error::Manifest(format!("row {}: bad seed {seed:?}", i + 1)))?,
            });
        }
        Ok(Self { entries })
    }
}

/// Every image derived from one simulated subject.
#[derive(Debug, Clone)]
pub struct SubjectImages {
    pub clean: Tensor<f64>,
    pub gm_mask: Tensor<f64>,
    pub wm_mask: Tensor<f64>,
    pub series: Tensor<f64>,
    pub input1: Tensor<f64>,
    pub ref1: Tensor<f64>,
    pub input2: Tensor<f64>,
    pub ref2: Tensor<f64>,
    pub pgs: Tensor<f64>,
}

impl SubjectImages {
    pub fn simulate(cfg: &RunConfig, subject_seed: u64) -> Result<Self> {
        let subject: PhantomSubject = phantom::generate_subject_with(
            &cfg.tissue(),
            subject_seed,
            &cfg.noise(subject_seed),
            (cfg.height, cfg.width),
        )?;
        let seg = phantom::segment_means(&subject)?;
        let pgs = phantom::pseudo_gold_standard(&subject, cfg.fwhm_px)?;
        Ok(Self {
            clean: subject.clean_cbf,
            gm_mask: subject.gm_mask,
            wm_mask: subject.wm_mask,
            series: subject.series,
            input1: seg.input1,
            ref1: seg.ref1,
            input2: seg.input2,
            ref2: seg.ref2,
            pgs,
        })
    }

    fn parts(&self) -> [(&'static str, &Tensor<f64>); 9] {
        [
            ("clean", &self.clean),
            ("gm_mask", &self.gm_mask),
            ("wm_mask", &self.wm_mask),
            ("series", &self.series),
            ("input1", &self.input1),
            ("ref1", &self.ref1),
            ("input2", &self.input2),
            ("ref2", &self.ref2),
            ("pgs", &self.pgs),
        ]
    }

    /// The test-time network input (first segment mean).
    pub fn test_input(&self) -> &Tensor<f64> {
        &self.input1
    }
}

/// Read access to a dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        if !path.is_file() {
            return Err(Error::Manifest(format!("{} not found", path.display())));
        }
        let text = fs::read_to_string(&path).at(&path)?;
        Ok(Self {
            root: root.into(),
            manifest: Manifest::parse_tsv(&text)?,
        })
    }

    pub fn subject_dir(&self, id: &str) -> PathBuf {
        self.root.join(SUBJECTS_DIR).join(id)
    }

    pub fn image(&self, id: &str, name: &str) -> Result<Tensor<f64>> {
        format::read_tensor(&self.subject_dir(id).join(format!("{name}.aslt")))
    }
}

fn is_empty_dir(dir: &Path) -> Result<bool> {
    if !dir.exists() {
        return Ok(true);
    }
    Ok(fs::read_dir(dir).at(dir)?.next().is_none())
}

/// Simulates every subject of `cfg` and writes the dataset under `cfg.dataset`.
///
/// Refuses a non-empty directory unless `force`, in which case previous
/// subject files and the manifest are replaced.
pub fn build_dataset(cfg: &RunConfig, force: bool) -> Result<Dataset> {
    cfg.validate()?;
    let root = &cfg.dataset;
    if !is_empty_dir(root)? {
        if !force {
            return Err(Error::NotEmpty(root.clone()));
        }
        let subjects = root.join(SUBJECTS_DIR);
        if subjects.exists() {
            fs::remove_dir_all(&subjects).at(&subjects)?;
        }
    }
    fs::create_dir_all(root).at(root)?;
    let manifest = Manifest::plan(cfg.seed, cfg.split);
    let ds = Dataset {
        root: root.clone(),
        manifest,
    };
    ds.manifest.entries.par_iter().try_for_each(|e| -> Result<()> {
        let images = SubjectImages::simulate(cfg, e.seed)?;
        let dir = ds.subject_dir(&e.id);
        for (name, t) in images.parts() {
            format::write_tensor(&dir.join(format!("{name}.aslt")), t)?;
        }
        Ok(())
    })?;
    format::write_atomic(&root.join(MANIFEST), ds.manifest.to_tsv().as_bytes())?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_and_tsv_round_trip() {
        let m = Manifest::plan(7, (2, 1, 1));
        assert_eq!(m.entries.len(), 4);
        assert_eq!(m.with_role(Role::Train).count(), 2);
        assert_eq!(m.entries[3].role, Role::Test);
        assert_eq!(Manifest::parse_tsv(&m.to_tsv()).unwrap(), m);
    }

    #[test]
    fn manifest_errors() {
        assert!(Manifest::parse_tsv("id\trole\n").is_err());
        let dup = "id\trole\tseed\na\ttrain\t1\na\ttest\t2\n";
        assert!(matches!(Manifest::parse_tsv(dup), Err(Error::DuplicateSubject(_))));
        assert!(Manifest::parse_tsv("id\trole\tseed\na\tholdout\t1\n").is_err());
        assert!(Manifest::parse_tsv("id\trole\tseed\n../x\ttrain\t1\n").is_err());
    }
}
