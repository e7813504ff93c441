//! Seeded synthetic panels with planted Hermite exposures.
//!
//! Factor returns are i.i.d. `N(0, factor_vol²)`. A fund's return is the sum
//! of its planted polynomials evaluated at the standardized factor values
//! `x / factor_vol`, plus Gaussian noise. Fund cells go missing independently
//! with probability `missing_rate`.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{json_key_error, Error, Result};
use crate::hermite::HermiteCoeffs;
use crate::panel::{FactorRecord, FundRecord, MonthIndex, MonthlyPanel, ReturnSeries};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exposure {
    /// Fund index, `0..funds`.
    pub fund: usize,
    /// Factor index, `0..factors`.
    pub factor: usize,
    pub beta: [f64; 5],
}

fn default_factor_vol() -> f64 {
    0.04
}

fn default_start() -> MonthIndex {
    MonthIndex::new(2000, 1).expect("valid month")
}

fn default_aum() -> f64 {
    1e8
}

fn default_aum_dispersion() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub funds: i64,
    pub factors: i64,
    /// Months of fund history.
    pub months: i64,
    pub exposures: Vec<Exposure>,
    pub noise_vol: f64,
    pub missing_rate: f64,
    pub seed: u64,
    #[serde(default = "default_factor_vol")]
    pub factor_vol: f64,
    /// Extra factor-only months preceding the fund history.
    #[serde(default)]
    pub factor_history: i64,
    #[serde(default = "default_start")]
    pub start: MonthIndex,
    /// Median initial AUM.
    #[serde(default = "default_aum")]
    pub aum_initial: f64,
    /// Log-scale dispersion of initial AUM across funds.
    #[serde(default = "default_aum_dispersion")]
    pub aum_dispersion: f64,
}

fn spec_err(key: &str, message: impl Into<String>) -> Error {
    Error::InvalidSpec {
        key: key.to_string(),
        message: message.into(),
    }
}

impl SyntheticSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let (key, message) = json_key_error(e);
            spec_err(&key, message)
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("funds", self.funds), ("factors", self.factors), ("months", self.months)] {
            if v <= 0 {
                return Err(spec_err(key, format!("must be positive, got {v}")));
            }
        }
        if self.factor_history < 0 {
            return Err(spec_err("factor_history", "must be >= 0"));
        }
        if !(self.noise_vol >= 0.0) {
            return Err(spec_err("noise_vol", format!("must be >= 0, got {}", self.noise_vol)));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(spec_err("missing_rate", format!("must lie in [0, 1), got {}", self.missing_rate)));
        }
        if !(self.factor_vol > 0.0) {
            return Err(spec_err("factor_vol", "must be positive"));
        }
        if !(self.aum_initial > 0.0) || !(self.aum_dispersion >= 0.0) {
            return Err(spec_err("aum_initial", "must be positive with non-negative dispersion"));
        }
        for e in &self.exposures {
            if e.fund as i64 >= self.funds || e.factor as i64 >= self.factors {
                return Err(spec_err(
                    "exposures",
                    format!("exposure ({}, {}) outside the fund/factor ranges", e.fund, e.factor),
                ));
            }
            if e.beta.iter().any(|b| !b.is_finite()) {
                return Err(spec_err("exposures", "non-finite beta"));
            }
        }
        Ok(())
    }

    /// A desk-scale spec: fund `i` loads on factor `i mod factors` with a
    /// fund-specific intercept drawn from the seed, so funds differ in
    /// expected return and each has one truly relevant factor.
    pub fn planted_desk(funds: usize, factors: usize, months: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "desk-exposures", &[]);
        let exposures = (0..funds)
            .map(|i| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Exposure {
                    fund: i,
                    factor: i % factors,
                    beta: [
                        rng.random_range(-0.006..0.012),
                        sign * rng.random_range(0.012..0.03),
                        rng.random_range(-0.004..0.004),
                        rng.random_range(-0.002..0.002),
                        rng.random_range(-0.001..0.001),
                    ],
                }
            })
            .collect();
        Self {
            funds: funds as i64,
            factors: factors as i64,
            months: months as i64,
            exposures,
            noise_vol: 0.02,
            missing_rate: 0.02,
            seed,
            factor_vol: default_factor_vol(),
            factor_history: 60,
            start: default_start(),
            aum_initial: default_aum(),
            aum_dispersion: default_aum_dispersion(),
        }
    }
}

pub fn fund_id(i: usize) -> String {
    format!("FUND{i:03}")
}

pub fn factor_id(j: usize) -> String {
    format!("FAC{j:02}")
}

/// Generates a panel from `spec`, seeding every stream from `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<MonthlyPanel> {
    spec.validate()?;
    let n_funds = spec.funds as usize;
    let n_factors = spec.factors as usize;
    let hist = spec.factor_history as usize;
    let total = hist + spec.months as usize;
    let start = spec.start;
    let end = start.offset(total as i64 - 1);

    let factors: Vec<FactorRecord> = (0..n_factors)
        .map(|j| {
            let id = factor_id(j);
            let mut rng = substream(seed, "synth-factor", &[id.as_bytes()]);
            let values = (0..total)
                .map(|_| Some(spec.factor_vol * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            FactorRecord {
                id,
                returns: ReturnSeries { start, values },
            }
        })
        .collect();

    let mut funds = Vec::with_capacity(n_funds);
    for i in 0..n_funds {
        let id = fund_id(i);
        let planted: Vec<(usize, HermiteCoeffs)> = spec
            .exposures
            .iter()
            .filter(|e| e.fund == i)
            .map(|e| (e.factor, HermiteCoeffs(e.beta)))
            .collect();
        let mut noise = substream(seed, "synth-noise", &[id.as_bytes()]);
        let mut holes = substream(seed, "synth-missing", &[id.as_bytes()]);
        let mut sizing = substream(seed, "synth-aum", &[id.as_bytes()]);
        let mut aum_level = spec.aum_initial * (spec.aum_dispersion * sizing.sample::<f64, _>(StandardNormal)).exp();

        let mut values = vec![None; total];
        let mut aum = vec![None; total];
        for t in hist..total {
            let signal: f64 = planted
                .iter()
                .map(|(j, c)| {
                    let x = factors[*j].returns.values[t].expect("complete factor");
                    c.eval(x / spec.factor_vol)
                })
                .sum();
            let eps: f64 = noise.sample(StandardNormal);
            let r = signal + spec.noise_vol * eps;
            if !(r > -1.0) {
                return Err(spec_err(
                    "exposures",
                    format!("fund {i} draws a return of {r} at month {}", start.offset(t as i64)),
                ));
            }
            let missing = spec.missing_rate > 0.0 && holes.random::<f64>() < spec.missing_rate;
            if !missing {
                aum_level *= 1.0 + r;
                values[t] = Some(r);
                aum[t] = Some(aum_level);
            }
        }
        funds.push(FundRecord {
            id,
            returns: ReturnSeries { start, values },
            aum,
        });
    }
    MonthlyPanel::new(funds, factors, (start, end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::ols_fit;
    use crate::panel::align;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            funds: 3,
            factors: 2,
            months: 48,
            exposures: vec![
                Exposure {
                    fund: 0,
                    factor: 1,
                    beta: [0.01, 0.02, -0.005, 0.002, 0.001],
                },
                Exposure {
                    fund: 2,
                    factor: 0,
                    beta: [0.0, -0.01, 0.0, 0.0, 0.0],
                },
            ],
            noise_vol: 0.01,
            missing_rate: 0.1,
            seed: 7,
            factor_vol: 0.05,
            factor_history: 12,
            start: MonthIndex::new(2010, 1).unwrap(),
            aum_initial: 1e7,
            aum_dispersion: 0.5,
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let s = small_spec();
        let a = generate_synthetic(&s, 7).unwrap();
        let b = generate_synthetic(&s, 7).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let c = generate_synthetic(&s, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_signal_zero_noise_gives_zero_returns() {
        let mut s = small_spec();
        s.noise_vol = 0.0;
        s.missing_rate = 0.0;
        for e in &mut s.exposures {
            e.beta = [0.0; 5];
        }
        let p = generate_synthetic(&s, 1).unwrap();
        for f in &p.funds {
            assert!(f.returns.values[12..].iter().all(|v| *v == Some(0.0)));
            assert!(f.returns.values[..12].iter().all(Option::is_none));
        }
    }

    #[test]
    fn noiseless_funds_are_exact_polynomials() {
        let mut s = small_spec();
        s.noise_vol = 0.0;
        s.missing_rate = 0.0;
        let p = generate_synthetic(&s, 3).unwrap();
        let window = (p.span.0.offset(12), p.span.1);
        let pair = align(&p.funds[0].returns, &p.factors[1].returns, window).unwrap();
        let fit = ols_fit(&pair).unwrap();
        assert!((fit.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small_spec();
        s.funds = 0;
        assert!(matches!(generate_synthetic(&s, 1), Err(Error::InvalidSpec { key, .. }) if key == "funds"));
        let mut s = small_spec();
        s.noise_vol = -0.1;
        assert!(matches!(generate_synthetic(&s, 1), Err(Error::InvalidSpec { key, .. }) if key == "noise_vol"));
        let mut s = small_spec();
        s.exposures[0].factor = 5;
        assert!(generate_synthetic(&s, 1).is_err());
    }

    #[test]
    fn json_errors_name_the_key() {
        let err = SyntheticSpec::from_json(r#"{"funds": 2, "factors": 1}"#).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec { ref key, .. } if key == "months"), "{err}");
        let err = SyntheticSpec::from_json(
            r#"{"funds":1,"factors":1,"months":10,"exposures":[],"noise_vol":0.1,"missing_rate":0,"seed":1,"bogus":3}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidSpec { ref key, .. } if key == "bogus"), "{err}");
        let err = SyntheticSpec::from_json(
            r#"{"funds":"x","factors":1,"months":10,"exposures":[],"noise_vol":0.1,"missing_rate":0,"seed":1}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidSpec { ref key, .. } if key == "funds"), "{err}");
    }

    #[test]
    fn spec_json_roundtrip() {
        let s = SyntheticSpec::planted_desk(5, 3, 24, 11);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(SyntheticSpec::from_json(&text).unwrap(), s);
    }
}
