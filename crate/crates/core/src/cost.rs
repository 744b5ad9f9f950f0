//! Inference cost model in exact rational dollars.
//!
//! Amounts are `Ratio<i128>` dollars throughout and are only rounded when
//! rendered for display.

use std::fmt;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Money = Ratio<i128>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CostError {
    #[error("invalid amount `{0}`")]
    InvalidAmount(String),
    #[error("negative {0}")]
    Negative(&'static str),
    #[error("profile `{name}`: {message}")]
    Profile { name: String, message: String },
    #[error("no profile named `{0}`")]
    UnknownProfile(String),
    #[error("profile file: {0}")]
    Config(String),
}

/// Parses a plain decimal such as `6.98` or `3,520` exactly.
pub fn parse_money(s: &str) -> Result<Money, CostError> {
    let bad = || CostError::InvalidAmount(s.to_string());
    let t: String = s.trim().chars().filter(|&c| c != ',').collect();
    let (neg, rest) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.as_str()),
    };
    let digits = rest.strip_prefix('$').unwrap_or(rest);
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if int.is_empty() && frac.is_empty()
        || !int.chars().all(|c| c.is_ascii_digit())
        || !frac.chars().all(|c| c.is_ascii_digit())
        || frac.len() > 12
    {
        return Err(bad());
    }
    let whole: i128 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
    let scale = 10i128.pow(frac.len() as u32);
    let part: i128 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
    let value = Money::new(
        whole.checked_mul(scale).and_then(|w| w.checked_add(part)).ok_or_else(bad)?,
        scale,
    );
    Ok(if neg { -value } else { value })
}

/// Rounds half away from zero to whole units.
fn round_half_away(m: &Money) -> i128 {
    let twice = m * Money::from_integer(2);
    let t = twice.trunc().to_integer();
    let r = if m.is_negative() { (t - 1) / 2 } else { (t + 1) / 2 };
    // `t` odd means the fraction is at least one half in magnitude.
    if t % 2 != 0 {
        r
    } else {
        m.trunc().to_integer()
    }
}

fn group_thousands(n: i128) -> String {
    let digits = n.unsigned_abs().to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    if n < 0 {
        out.insert(0, '-');
    }
    out
}

/// Whole dollars with thousands separators, e.g. `$38,720`.
pub fn format_dollars(m: &Money) -> String {
    let d = round_half_away(m);
    let sign = if d < 0 { "-" } else { "" };
    format!("{sign}${}", group_thousands(d.abs()))
}

/// Dollars and cents, e.g. `$2,680.32`.
pub fn format_cents(m: &Money) -> String {
    let cents = round_half_away(&(m * Money::from_integer(100)));
    let sign = if cents < 0 { "-" } else { "" };
    let c = cents.abs();
    format!("{sign}${}.{:02}", group_thousands(c / 100), c % 100)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pricing {
    /// A published per-1k-CPT figure.
    Flat { per_1k: Money },
    Tokens {
        price_in_per_million: Money,
        price_out_per_million: Money,
        avg_input_tokens_per_cpt: u64,
        avg_output_tokens_per_cpt: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostProfile {
    pub name: String,
    pub pricing: Pricing,
    pub one_time_setup: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostEstimate {
    #[serde(serialize_with = "ser_money")]
    pub per_1k_cpts: Money,
    #[serde(serialize_with = "ser_money")]
    pub total_for_n: Money,
    #[serde(serialize_with = "ser_money")]
    pub setup: Money,
    pub n_cpts: u64,
}

fn ser_money<S: serde::Serializer>(m: &Money, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_cents(m))
}

impl fmt::Display for CostEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "per 1k CPTs: {}\ntotal for {} CPTs: {}",
            format_dollars(&self.per_1k_cpts),
            self.n_cpts,
            format_dollars(&self.total_for_n)
        )?;
        if !self.setup.is_zero() {
            write!(f, "\none-time setup: {}", format_dollars(&self.setup))?;
        }
        Ok(())
    }
}

impl CostProfile {
    pub fn flat(name: &str, per_1k: Money, one_time_setup: Money) -> Self {
        CostProfile {
            name: name.to_string(),
            pricing: Pricing::Flat { per_1k },
            one_time_setup,
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let err = |message: &str| CostError::Profile {
            name: self.name.clone(),
            message: message.to_string(),
        };
        if self.one_time_setup.is_negative() {
            return Err(err("negative setup cost"));
        }
        match &self.pricing {
            Pricing::Flat { per_1k } if per_1k.is_negative() => Err(err("negative per-1k price")),
            Pricing::Tokens {
                price_in_per_million,
                price_out_per_million,
                ..
            } if price_in_per_million.is_negative() || price_out_per_million.is_negative() => {
                Err(err("negative token price"))
            }
            _ => Ok(()),
        }
    }

    pub fn per_1k(&self) -> Money {
        match &self.pricing {
            Pricing::Flat { per_1k } => *per_1k,
            Pricing::Tokens {
                price_in_per_million,
                price_out_per_million,
                avg_input_tokens_per_cpt,
                avg_output_tokens_per_cpt,
            } => {
                let per_cpt = Money::from_integer(*avg_input_tokens_per_cpt as i128) * price_in_per_million
                    + Money::from_integer(*avg_output_tokens_per_cpt as i128) * price_out_per_million;
                per_cpt * Money::from_integer(1000) / Money::from_integer(1_000_000)
            }
        }
    }
}

pub fn cost_estimate(profile: &CostProfile, n_cpts: i64) -> Result<CostEstimate, CostError> {
    if n_cpts < 0 {
        return Err(CostError::Negative("CPT count"));
    }
    profile.validate()?;
    let per_1k = profile.per_1k();
    Ok(CostEstimate {
        per_1k_cpts: per_1k,
        total_for_n: per_1k * Money::new(n_cpts as i128, 1000),
        setup: profile.one_time_setup,
        n_cpts: n_cpts as u64,
    })
}

/// Training cost of `gpus` accelerators rented for `hours` at `rate` per GPU-hour.
pub fn gpu_setup_cost(hours: u64, gpus: u64, rate_per_gpu_hour: Money) -> Money {
    Money::from_integer((hours * gpus) as i128) * rate_per_gpu_hour
}

/// Approximate float view, for logging only.
pub fn to_f64(m: &Money) -> f64 {
    m.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSetupCompute {
    hours: u64,
    gpus: u64,
    rate_per_gpu_hour: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    name: String,
    per_1k: Option<String>,
    price_in_per_million: Option<String>,
    price_out_per_million: Option<String>,
    avg_input_tokens_per_cpt: Option<u64>,
    avg_output_tokens_per_cpt: Option<u64>,
    setup: Option<String>,
    setup_compute: Option<RawSetupCompute>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfiles {
    #[serde(default)]
    profile: Vec<RawProfile>,
}

/// Reads `[[profile]]` entries from TOML. Amounts are strings so they parse
/// exactly.
pub fn parse_profiles(text: &str) -> Result<Vec<CostProfile>, CostError> {
    let raw: RawProfiles = toml::from_str(text).map_err(|e| CostError::Config(e.to_string()))?;
    let mut out = Vec::new();
    for p in raw.profile {
        let err = |message: String| CostError::Profile {
            name: p.name.clone(),
            message,
        };
        let pricing = match (
            &p.per_1k,
            &p.price_in_per_million,
            &p.price_out_per_million,
            p.avg_input_tokens_per_cpt,
            p.avg_output_tokens_per_cpt,
        ) {
            (Some(per_1k), None, None, None, None) => Pricing::Flat {
                per_1k: parse_money(per_1k)?,
            },
            (None, Some(pin), Some(pout), Some(tin), Some(tout)) => Pricing::Tokens {
                price_in_per_million: parse_money(pin)?,
                price_out_per_million: parse_money(pout)?,
                avg_input_tokens_per_cpt: tin,
                avg_output_tokens_per_cpt: tout,
            },
            _ => {
                return Err(err(
                    "give either per_1k, or all of price_in_per_million, price_out_per_million, \
                     avg_input_tokens_per_cpt and avg_output_tokens_per_cpt"
                        .into(),
                ))
            }
        };
        let one_time_setup = match (&p.setup, &p.setup_compute) {
            (Some(_), Some(_)) => return Err(err("give setup or setup_compute, not both".into())),
            (Some(s), None) => parse_money(s)?,
            (None, Some(c)) => gpu_setup_cost(c.hours, c.gpus, parse_money(&c.rate_per_gpu_hour)?),
            (None, None) => Money::zero(),
        };
        let profile = CostProfile {
            name: p.name.clone(),
            pricing,
            one_time_setup,
        };
        profile.validate()?;
        out.push(profile);
    }
    Ok(out)
}

pub fn find_profile<'a>(profiles: &'a [CostProfile], name: &str) -> Result<&'a CostProfile, CostError> {
    profiles
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| CostError::UnknownProfile(name.to_string()))
}

/// The shipped profiles, one per row of the published comparison.
pub const DEFAULT_PROFILES: &str = include_str!("../../../fixtures/cost_profiles.toml");

pub fn default_profiles() -> Vec<CostProfile> {
    parse_profiles(DEFAULT_PROFILES).expect("shipped cost profiles parse")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(s: &str) -> Money {
        parse_money(s).unwrap()
    }

    #[test]
    fn parses_exactly() {
        assert_eq!(m("6.98"), Money::new(698, 100));
        assert_eq!(m("$3,520"), Money::from_integer(3520));
        assert_eq!(m("-0.5"), Money::new(-1, 2));
        assert_eq!(m(".25"), Money::new(1, 4));
        for bad in ["", ".", "1.2.3", "abc", "1e3"] {
            assert!(parse_money(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn display_rounding() {
        assert_eq!(format_dollars(&m("2680.32")), "$2,680");
        assert_eq!(format_dollars(&m("2680.5")), "$2,681");
        assert_eq!(format_dollars(&m("-2.5")), "-$3");
        assert_eq!(format_dollars(&m("38720")), "$38,720");
        assert_eq!(format_dollars(&m("22")), "$22");
        assert_eq!(format_dollars(&m("1234567")), "$1,234,567");
        assert_eq!(format_cents(&m("2680.32")), "$2,680.32");
        assert_eq!(format_cents(&m("0.005")), "$0.01");
    }

    #[test]
    fn token_pricing() {
        let p = CostProfile {
            name: "t".into(),
            pricing: Pricing::Tokens {
                price_in_per_million: m("0.25"),
                price_out_per_million: m("2.00"),
                avg_input_tokens_per_cpt: 4000,
                avg_output_tokens_per_cpt: 500,
            },
            one_time_setup: Money::zero(),
        };
        // 1000 × (4000 × 0.25 + 500 × 2) / 1e6 = 2
        assert_eq!(cost_estimate(&p, 1000).unwrap().per_1k_cpts, Money::from_integer(2));
    }

    #[test]
    fn negative_inputs_rejected() {
        let p = CostProfile::flat("x", m("1"), Money::zero());
        assert_eq!(cost_estimate(&p, -1), Err(CostError::Negative("CPT count")));
        let p = CostProfile::flat("x", m("-1"), Money::zero());
        assert!(cost_estimate(&p, 1).is_err());
    }

    #[test]
    fn shipped_profiles() {
        let ps = default_profiles();
        assert_eq!(ps.len(), 6);
        let fr = find_profile(&ps, "rule-based-fr").unwrap();
        assert_eq!(fr.one_time_setup, m("2680.32"));
        assert!(find_profile(&ps, "nope").is_err());
    }

    #[test]
    fn profile_file_errors() {
        assert!(parse_profiles("[[profile]]\nname = \"x\"\n").is_err());
        assert!(parse_profiles("[[profile]]\nname = \"x\"\nper_1k = \"1\"\nbogus = 1\n").is_err());
        let ps = parse_profiles(
            "[[profile]]\nname = \"t\"\nprice_in_per_million = \"2\"\nprice_out_per_million = \"8\"\n\
             avg_input_tokens_per_cpt = 100\navg_output_tokens_per_cpt = 10\n",
        )
        .unwrap();
        assert_eq!(ps[0].per_1k(), Money::new(28, 100));
    }
}
