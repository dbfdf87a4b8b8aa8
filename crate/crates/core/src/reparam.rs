//! Maps a prune fraction to a monotone channel vector.
//!
//! The GRU width `c4` is scaled by `1 - p` first; every earlier layer is then
//! clamped so the vector stays non-decreasing.

use crate::error::{Error, Result};
use crate::model::NetworkParam;

/// The reference CRUSE32 channel vector.
pub const CRUSE32: [usize; 4] = [32, 64, 128, 256];
pub const CRUSE16: [usize; 4] = [16, 32, 64, 128];

/// Prune fractions of the standard configurations, as `(name, p)`.
pub const STANDARD_FRACTIONS: [(&str, f64); 8] = [
    ("P.125", 0.125),
    ("P.250", 0.25),
    ("P.500", 0.5),
    ("P.5625", 0.5625),
    ("P.625", 0.625),
    ("P.6875", 0.6875),
    ("P.750", 0.75),
    ("P.875", 0.875),
];

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct PruneFraction(f64);

impl PruneFraction {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::arg(format!("prune fraction must lie in [0, 1), got {p}")));
        }
        Ok(Self(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn derive_config(base: NetworkParam, p: PruneFraction) -> Result<NetworkParam> {
    let [_, _, _, c4] = base.channels();
    let scaled = ((1.0 - p.value()) * c4 as f64).round_ties_even();
    if scaled < 1.0 {
        return Err(Error::arg(format!(
            "fraction {} leaves no GRU channels (c4 = {c4})",
            p.value()
        )));
    }
    let mut out = base.channels();
    out[3] = scaled as usize;
    for i in (0..3).rev() {
        out[i] = out[i].min(out[i + 1]);
    }
    NetworkParam::new(out)
}

/// CRUSE32, CRUSE16 and the eight P.* configurations derived from CRUSE32.
pub fn standard_configs() -> Vec<(String, NetworkParam)> {
    let base = NetworkParam::new(CRUSE32).expect("valid");
    let mut out = vec![
        ("CRUSE32".to_string(), base),
        ("CRUSE16".to_string(), NetworkParam::new(CRUSE16).expect("valid")),
    ];
    for (name, p) in STANDARD_FRACTIONS {
        let cfg = derive_config(base, PruneFraction::new(p).expect("valid")).expect("valid");
        out.push((name.to_string(), cfg));
    }
    out
}

/// Resolves a configuration name (`CRUSE32`, `P.625`, ...) or a literal
/// `c1,c2,c3,c4` vector.
pub fn resolve_config(name_or_vector: &str) -> Result<NetworkParam> {
    if let Some((_, cfg)) = standard_configs()
        .into_iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name_or_vector))
    {
        return Ok(cfg);
    }
    name_or_vector.parse().map_err(|_| {
        Error::arg(format!(
            "{name_or_vector:?} is neither a known configuration nor a c1,c2,c3,c4 vector"
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cruse32() -> NetworkParam {
        NetworkParam::new(CRUSE32).unwrap()
    }

    fn derive(p: f64) -> [usize; 4] {
        derive_config(cruse32(), PruneFraction::new(p).unwrap())
            .unwrap()
            .channels()
    }

    #[test]
    fn table_rows() {
        assert_eq!(derive(0.5), [32, 64, 128, 128]);
        assert_eq!(derive(0.875), [32, 32, 32, 32]);
        assert_eq!(derive(0.0), CRUSE32);
        assert_eq!(derive(0.5625), [32, 64, 112, 112]);
    }

    #[test]
    fn standard_table() {
        let table = standard_configs();
        assert_eq!(table.len(), 10);
        let get = |n: &str| table.iter().find(|(k, _)| k == n).unwrap().1.channels();
        assert_eq!(get("P.6875"), [32, 64, 80, 80]);
        assert_eq!(get("P.125"), [32, 64, 128, 224]);
        assert_eq!(get("CRUSE16"), [16, 32, 64, 128]);
    }

    #[test]
    fn rejects_bad_fractions() {
        assert!(PruneFraction::new(1.0).is_err());
        assert!(PruneFraction::new(-0.1).is_err());
        assert!(PruneFraction::new(f64::NAN).is_err());
        let tiny = NetworkParam::new([1, 1, 1, 1]).unwrap();
        assert!(derive_config(tiny, PruneFraction::new(0.9).unwrap()).is_err());
    }

    #[test]
    fn ties_round_to_even() {
        let base = NetworkParam::new([1, 1, 1, 5]).unwrap();
        // 0.5 * 5 = 2.5 -> 2
        assert_eq!(
            derive_config(base, PruneFraction::new(0.5).unwrap()).unwrap().channels()[3],
            2
        );
    }

    #[test]
    fn resolves_names_and_vectors() {
        assert_eq!(resolve_config("p.625").unwrap().channels(), [32, 64, 96, 96]);
        assert_eq!(resolve_config("1,2,3,4").unwrap().channels(), [1, 2, 3, 4]);
        assert!(resolve_config("P.999").is_err());
    }

    fn monotone_base() -> impl Strategy<Value = NetworkParam> {
        prop::collection::vec(1usize..200, 4).prop_map(|mut v| {
            v.sort_unstable();
            NetworkParam::new([v[0], v[1], v[2], v[3]]).unwrap()
        })
    }

    proptest! {
        #[test]
        fn output_is_monotone_and_c4_exact(base in monotone_base(), p in 0.0f64..1.0) {
            let c4 = base.channels()[3];
            let expected = ((1.0 - p) * c4 as f64).round_ties_even() as usize;
            match derive_config(base, PruneFraction::new(p).unwrap()) {
                Ok(cfg) => {
                    let c = cfg.channels();
                    prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
                    prop_assert_eq!(c[3], expected);
                    prop_assert!(cfg.fits_within(&base));
                }
                Err(_) => prop_assert_eq!(expected, 0),
            }
        }
    }
}
