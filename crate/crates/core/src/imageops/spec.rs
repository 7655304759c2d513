use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The eleven processing operations, in confusion-matrix order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperationKind {
    GC,
    HE,
    UM,
    MeanF,
    GF,
    MedF,
    WF,
    Sca,
    Rot,
    JPEG,
    JP2,
}

impl OperationKind {
    pub const ALL: [OperationKind; 11] = [
        OperationKind::GC,
        OperationKind::HE,
        OperationKind::UM,
        OperationKind::MeanF,
        OperationKind::GF,
        OperationKind::MedF,
        OperationKind::WF,
        OperationKind::Sca,
        OperationKind::Rot,
        OperationKind::JPEG,
        OperationKind::JP2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperationKind::GC => "GC",
            OperationKind::HE => "HE",
            OperationKind::UM => "UM",
            OperationKind::MeanF => "MeanF",
            OperationKind::GF => "GF",
            OperationKind::MedF => "MedF",
            OperationKind::WF => "WF",
            OperationKind::Sca => "Sca",
            OperationKind::Rot => "Rot",
            OperationKind::JPEG => "JPEG",
            OperationKind::JP2 => "JP2",
        }
    }
}

impl fmt::Display for OperationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OperationKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid("operation kind", format!("unknown operation {s:?}")))
    }
}

pub const GAMMAS: [f64; 10] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.2, 1.4, 1.6, 1.8, 2.0];
pub const WINDOWS: [usize; 3] = [3, 5, 7];
pub const UPSCALE_PERCENT: [u32; 12] = [1, 3, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90];
pub const DOWNSCALE_PERCENT: [u32; 11] = [1, 3, 5, 10, 15, 20, 25, 30, 35, 40, 45];
pub const ROTATION_DEGREES: [u32; 11] = [1, 3, 5, 10, 15, 20, 25, 30, 35, 40, 45];
pub const UM_RANGE: (f64, f64) = (0.5, 1.5);
pub const GF_SIGMA_RANGE: (f64, f64) = (0.8, 1.6);
pub const JPEG_QUALITY_RANGE: (u8, u8) = (75, 99);
pub const JP2_RATIO_RANGE: (f64, f64) = (2.0, 8.0);

/// One operation with its parameters. Serializes as
/// `{"kind": "GF", "params": {"window": 5, "sigma": 1.1}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum OperationSpec {
    GC { gamma: f64 },
    HE,
    UM { sigma: f64, lambda: f64 },
    MeanF { window: usize },
    GF { window: usize, sigma: f64 },
    MedF { window: usize },
    WF { window: usize },
    Sca { factor: f64 },
    Rot { degrees: f64 },
    JPEG { quality: u8 },
    JP2 { ratio: f64 },
}

impl OperationSpec {
    pub fn kind(&self) -> OperationKind {
        match self {
            OperationSpec::GC { .. } => OperationKind::GC,
            OperationSpec::HE => OperationKind::HE,
            OperationSpec::UM { .. } => OperationKind::UM,
            OperationSpec::MeanF { .. } => OperationKind::MeanF,
            OperationSpec::GF { .. } => OperationKind::GF,
            OperationSpec::MedF { .. } => OperationKind::MedF,
            OperationSpec::WF { .. } => OperationKind::WF,
            OperationSpec::Sca { .. } => OperationKind::Sca,
            OperationSpec::Rot { .. } => OperationKind::Rot,
            OperationSpec::JPEG { .. } => OperationKind::JPEG,
            OperationSpec::JP2 { .. } => OperationKind::JP2,
        }
    }

    /// Whether the parameters are among those the sampler can produce.
    pub fn in_table_ranges(&self) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&v);
        match *self {
            OperationSpec::GC { gamma } => GAMMAS.contains(&gamma),
            OperationSpec::HE => true,
            OperationSpec::UM { sigma, lambda } => within(sigma, UM_RANGE) && within(lambda, UM_RANGE),
            OperationSpec::MeanF { window } | OperationSpec::MedF { window } | OperationSpec::WF { window } => {
                WINDOWS.contains(&window)
            }
            OperationSpec::GF { window, sigma } => WINDOWS.contains(&window) && within(sigma, GF_SIGMA_RANGE),
            OperationSpec::Sca { factor } => {
                UPSCALE_PERCENT.iter().any(|&p| factor == scale_factor(p, true))
                    || DOWNSCALE_PERCENT.iter().any(|&p| factor == scale_factor(p, false))
            }
            OperationSpec::Rot { degrees } => ROTATION_DEGREES.iter().any(|&d| f64::from(d) == degrees),
            OperationSpec::JPEG { quality } => (JPEG_QUALITY_RANGE.0..=JPEG_QUALITY_RANGE.1).contains(&quality),
            OperationSpec::JP2 { ratio } => within(ratio, JP2_RATIO_RANGE),
        }
    }
}

/// Scale factor for an up- or down-sampling percentage.
pub fn scale_factor(percent: u32, up: bool) -> f64 {
    let p = f64::from(percent);
    if up {
        (100.0 + p) / 100.0
    } else {
        (100.0 - p) / 100.0
    }
}

/// Draws a random parameterisation of `kind`.
pub fn sample_operation<R: Rng + ?Sized>(kind: OperationKind, rng: &mut R) -> OperationSpec {
    let window = |rng: &mut R| *WINDOWS.choose(rng).expect("non-empty");
    match kind {
        OperationKind::GC => OperationSpec::GC {
            gamma: *GAMMAS.choose(rng).expect("non-empty"),
        },
        OperationKind::HE => OperationSpec::HE,
        OperationKind::UM => OperationSpec::UM {
            sigma: rng.random_range(UM_RANGE.0..=UM_RANGE.1),
            lambda: rng.random_range(UM_RANGE.0..=UM_RANGE.1),
        },
        OperationKind::MeanF => OperationSpec::MeanF { window: window(rng) },
        OperationKind::GF => OperationSpec::GF {
            window: window(rng),
            sigma: rng.random_range(GF_SIGMA_RANGE.0..=GF_SIGMA_RANGE.1),
        },
        OperationKind::MedF => OperationSpec::MedF { window: window(rng) },
        OperationKind::WF => OperationSpec::WF { window: window(rng) },
        OperationKind::Sca => {
            let up = rng.random_bool(0.5);
            let percent = if up {
                *UPSCALE_PERCENT.choose(rng).expect("non-empty")
            } else {
                *DOWNSCALE_PERCENT.choose(rng).expect("non-empty")
            };
            OperationSpec::Sca {
                factor: scale_factor(percent, up),
            }
        }
        OperationKind::Rot => OperationSpec::Rot {
            degrees: f64::from(*ROTATION_DEGREES.choose(rng).expect("non-empty")),
        },
        OperationKind::JPEG => OperationSpec::JPEG {
            quality: rng.random_range(JPEG_QUALITY_RANGE.0..=JPEG_QUALITY_RANGE.1),
        },
        OperationKind::JP2 => OperationSpec::JP2 {
            ratio: rng.random_range(JP2_RATIO_RANGE.0..=JP2_RATIO_RANGE.1),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampled_specs_are_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            for kind in OperationKind::ALL {
                let spec = sample_operation(kind, &mut rng);
                assert_eq!(spec.kind(), kind);
                assert!(spec.in_table_ranges(), "{spec:?}");
            }
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let a: Vec<_> = (0..20)
            .map(|i| sample_operation(OperationKind::ALL[i % 11], &mut ChaCha8Rng::seed_from_u64(i as u64)))
            .collect();
        let b: Vec<_> = (0..20)
            .map(|i| sample_operation(OperationKind::ALL[i % 11], &mut ChaCha8Rng::seed_from_u64(i as u64)))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn every_listed_value_gets_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut gammas = std::collections::BTreeSet::new();
        let mut factors = std::collections::BTreeSet::new();
        for _ in 0..2000 {
            if let OperationSpec::GC { gamma } = sample_operation(OperationKind::GC, &mut rng) {
                gammas.insert((gamma * 10.0).round() as i64);
            }
            if let OperationSpec::Sca { factor } = sample_operation(OperationKind::Sca, &mut rng) {
                factors.insert((factor * 100.0).round() as i64);
            }
        }
        assert_eq!(gammas.len(), 10);
        assert_eq!(factors.len(), 23);
        assert_eq!(*factors.first().unwrap(), 55);
        assert_eq!(*factors.last().unwrap(), 190);
    }

    #[test]
    fn json_shape() {
        let spec = OperationSpec::GF { window: 5, sigma: 1.25 };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"kind":"GF","params":{"window":5,"sigma":1.25}}"#);
        assert_eq!(serde_json::from_str::<OperationSpec>(&json).unwrap(), spec);
        let he = serde_json::to_string(&OperationSpec::HE).unwrap();
        assert_eq!(serde_json::from_str::<OperationSpec>(&he).unwrap(), OperationSpec::HE);
    }

    #[test]
    fn kind_parses_case_insensitively() {
        assert_eq!("medf".parse::<OperationKind>().unwrap(), OperationKind::MedF);
        assert!("Blur".parse::<OperationKind>().is_err());
    }
}
