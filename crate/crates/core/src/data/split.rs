use std::collections::HashSet;

use rand::seq::SliceRandom;

use super::DatasetIndex;
use crate::error::{Error, Result};
use crate::nn::seeded_rng;

pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitUnit {
    /// Whole patients go to one side, so no slide contributes to both.
    #[default]
    Patient,
    Patch,
}

impl SplitUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitUnit::Patient => "patient",
            SplitUnit::Patch => "patch",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "patient" => Ok(SplitUnit::Patient),
            "patch" => Ok(SplitUnit::Patch),
            other => Err(Error::Config(format!(
                "unknown split unit {other:?} (expected patient or patch)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub unit: SplitUnit,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: TEST_FRACTION,
            unit: SplitUnit::Patient,
            seed: 0,
        }
    }
}

/// Seeded train/test split; both halves keep the index's patch order.
///
/// Patient unit: shuffled patients join the test side until it holds at least
/// `test_fraction` of all patches. Patch unit: exactly `⌊test_fraction·n⌋`
/// shuffled patches are held out.
pub fn split(index: &DatasetIndex, spec: &SplitSpec) -> Result<(DatasetIndex, DatasetIndex)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction {} outside (0,1)",
            spec.test_fraction
        )));
    }
    let n = index.len();
    if n == 0 {
        return Err(Error::Split("cannot split an empty dataset".into()));
    }
    let mut rng = seeded_rng(spec.seed);
    let target = spec.test_fraction * n as f64 - 1e-9;
    let test: HashSet<usize> = match spec.unit {
        SplitUnit::Patient => {
            let groups = index.patients();
            if groups.len() < 2 {
                return Err(Error::Split(
                    "a patient-level split needs at least two patients; use the patch split unit"
                        .into(),
                ));
            }
            let mut order: Vec<&Vec<usize>> = groups.values().collect();
            order.shuffle(&mut rng);
            let mut test = HashSet::new();
            for members in order {
                if test.len() as f64 >= target {
                    break;
                }
                test.extend(members.iter().copied());
            }
            test
        }
        SplitUnit::Patch => {
            let k = (spec.test_fraction * n as f64 + 1e-9).floor() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order.into_iter().take(k).collect()
        }
    };
    if test.is_empty() || test.len() == n {
        return Err(Error::Split(format!(
            "split of {n} patches left one side empty ({} test)",
            test.len()
        )));
    }
    let (test_pos, train_pos): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| test.contains(i));
    Ok((index.subset(&train_pos), index.subset(&test_pos)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Patch;
    use std::path::PathBuf;

    fn fixture(patients: usize, per: usize) -> DatasetIndex {
        let patches = (0..patients)
            .flat_map(|p| {
                (0..per).map(move |i| Patch {
                    patient: format!("p{p:02}"),
                    x: Some(i as u32),
                    y: Some(0),
                    label: i % 2,
                    path: PathBuf::from(format!("p{p:02}/{i}.png")),
                })
            })
            .collect();
        DatasetIndex::new(patches).unwrap()
    }

    #[test]
    fn patient_split_of_uniform_fixture() {
        let (train, test) = split(&fixture(10, 10), &SplitSpec::default()).unwrap();
        assert_eq!(test.len(), 20);
        assert_eq!(test.patients().len(), 2);
        assert_eq!(train.len(), 80);
        for p in test.patients().keys() {
            assert!(!train.patients().contains_key(p));
        }
    }

    #[test]
    fn patch_split_is_floor() {
        let spec = SplitSpec {
            unit: SplitUnit::Patch,
            ..Default::default()
        };
        let (train, test) = split(&fixture(1, 100), &spec).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        let (_, test) = split(&fixture(1, 99), &spec).unwrap();
        assert_eq!(test.len(), 19);
    }

    #[test]
    fn single_patient_needs_patch_unit() {
        let err = split(&fixture(1, 10), &SplitSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Split(msg) if msg.contains("patch")));
    }
}
