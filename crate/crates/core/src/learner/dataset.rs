use std::io::{BufRead, Write};
use std::path::Path;

use crate::allocation::AllocationMatrix;
use crate::env::{Environment, Features, RobotState, SupervisorAction};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub t: u64,
    pub robot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPair {
    pub features: Features,
    pub action: usize,
    /// `None` for offline pairs collected before operation.
    pub provenance: Option<Provenance>,
}

/// Append-only training set of (featurized state, action) pairs.
///
/// Online pairs only come from robots that had a human allocated and whose
/// human action was not a hard reset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pairs: Vec<DataPair>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[DataPair] {
        &self.pairs
    }

    pub fn get(&self, i: usize) -> &DataPair {
        &self.pairs[i]
    }

    pub fn online_len(&self) -> usize {
        self.pairs.iter().filter(|p| p.provenance.is_some()).count()
    }

    pub fn push_offline(&mut self, features: Features, action: usize) {
        self.pairs.push(DataPair { features, action, provenance: None });
    }

    /// Appends this step's human-labelled pairs and returns how many were added.
    ///
    /// `human_actions[i]` must be `Some` exactly for robots assisted under
    /// `alloc`; hard-reset actions produce no pair.
    pub fn aggregate(
        &mut self,
        env: &dyn Environment,
        states: &[RobotState],
        alloc: &AllocationMatrix,
        human_actions: &[Option<SupervisorAction>],
        t: u64,
    ) -> Result<usize> {
        let n = alloc.num_robots();
        if states.len() != n || human_actions.len() != n {
            return Err(Error::usage("aggregate: lengths disagree with the allocation"));
        }
        for (i, a) in human_actions.iter().enumerate() {
            match (alloc.is_assisted(i), a) {
                (false, Some(_)) => {
                    return Err(Error::usage(format!("human action supplied for unallocated robot {i}")))
                }
                (true, None) => return Err(Error::usage(format!("allocated robot {i} has no human action"))),
                _ => {}
            }
        }
        let before = self.pairs.len();
        for (i, a) in human_actions.iter().enumerate() {
            if let Some(SupervisorAction::Move(action)) = *a {
                self.pairs.push(DataPair {
                    features: env.featurize(&states[i]),
                    action,
                    provenance: Some(Provenance { t, robot: i }),
                });
            }
        }
        Ok(self.pairs.len() - before)
    }

    /// Writes one tab-separated record per pair:
    /// `timestep  robot_id  features  action`, where features are
    /// `index:value` items joined by commas and offline pairs leave the first
    /// two fields empty.
    pub fn write_records<W: Write>(&self, mut out: W) -> Result<()> {
        for p in &self.pairs {
            let (t, r) = match p.provenance {
                Some(pv) => (pv.t.to_string(), pv.robot.to_string()),
                None => (String::new(), String::new()),
            };
            let feats: Vec<String> = p.features.iter().map(|(k, v)| format!("{k}:{v}")).collect();
            writeln!(out, "{t}\t{r}\t{}\t{}", feats.join(","), p.action)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_records(f)
    }

    pub fn read_records<R: BufRead>(input: R) -> Result<Dataset> {
        let bad = |line: usize, what: &str| Error::usage(format!("dataset record {line}: {what}"));
        let mut ds = Dataset::new();
        for (ln, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(ln, "expected 4 tab-separated fields"));
            }
            let provenance = match (fields[0], fields[1]) {
                ("", "") => None,
                (t, r) => Some(Provenance {
                    t: t.parse().map_err(|_| bad(ln, "timestep"))?,
                    robot: r.parse().map_err(|_| bad(ln, "robot id"))?,
                }),
            };
            let mut features = Vec::new();
            for item in fields[2].split(',').filter(|s| !s.is_empty()) {
                let (k, v) = item.split_once(':').ok_or_else(|| bad(ln, "feature item"))?;
                features.push((
                    k.parse().map_err(|_| bad(ln, "feature index"))?,
                    v.parse().map_err(|_| bad(ln, "feature value"))?,
                ));
            }
            let action = fields[3].parse().map_err(|_| bad(ln, "action"))?;
            ds.pairs.push(DataPair { features, action, provenance });
        }
        Ok(ds)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Self::read_records(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
