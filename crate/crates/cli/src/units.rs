//! Quantities written as `"<number> <unit>"` strings, resolved to SI at
//! parse time and written back in SI.

use std::fmt;

use cpforce_core::constants::{DEBYE, EV, HBAR};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

fn split(s: &str) -> Option<(f64, &str)> {
    let s = s.trim();
    let idx = s.find(|ch: char| ch.is_whitespace())?;
    let (num, unit) = s.split_at(idx);
    let v: f64 = num.parse().ok()?;
    v.is_finite().then_some((v, unit.trim()))
}

macro_rules! quantity {
    ($name:ident, $si:literal, $what:literal, { $($unit:literal => ($mul:expr, $div:expr)),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Default)]
        pub struct $name(pub f64);

        impl $name {
            pub const SI_UNIT: &'static str = $si;

            pub fn parse(s: &str) -> Result<Self, String> {
                let err = || format!(
                    concat!("expected ", $what, " as \"<number> <unit>\" with unit one of [{}], got {:?}"),
                    [$($unit),+].join(", "),
                    s
                );
                let (v, unit) = split(s).ok_or_else(err)?;
                // Dividing by exact powers of ten keeps decimal inputs correctly rounded.
                let (mul, div): (f64, f64) = match unit {
                    $($unit => ($mul, $div),)+
                    _ => return Err(err()),
                };
                Ok(Self(v * mul / div))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&format!("{:e} {}", self.0, $si))
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                struct V;
                impl<'de> Visitor<'de> for V {
                    type Value = $name;
                    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                        f.write_str(concat!($what, " string with unit"))
                    }
                    fn visit_str<E: de::Error>(self, v: &str) -> Result<$name, E> {
                        $name::parse(v).map_err(E::custom)
                    }
                }
                d.deserialize_str(V)
            }
        }
    };
}

quantity!(Length, "m", "a length", { "m" => (1.0, 1.0), "um" => (1.0, 1e6), "µm" => (1.0, 1e6), "nm" => (1.0, 1e9) });
quantity!(Energy, "J", "an energy", { "J" => (1.0, 1.0), "eV" => (EV, 1.0) });
quantity!(Frequency, "rad/s", "an angular frequency", { "rad/s" => (1.0, 1.0), "eV" => (EV, HBAR) });
quantity!(Dipole, "C*m", "a dipole moment", {
    "C*m" => (1.0, 1.0), "C·m" => (1.0, 1.0), "C m" => (1.0, 1.0), "debye" => (DEBYE, 1.0), "D" => (DEBYE, 1.0),
});
quantity!(Temperature, "K", "a temperature", { "K" => (1.0, 1.0) });
quantity!(Time, "s", "a time", {
    "s" => (1.0, 1.0), "ms" => (1.0, 1e3), "us" => (1.0, 1e6), "µs" => (1.0, 1e6), "ns" => (1.0, 1e9),
    "ps" => (1.0, 1e12), "fs" => (1.0, 1e15),
});

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions() {
        assert_eq!(Length::parse("50 nm").unwrap().0, 5e-8);
        assert_eq!(Length::parse("2 µm").unwrap().0, 2e-6);
        assert_eq!(Energy::parse("1 eV").unwrap().0, EV);
        assert_eq!(Frequency::parse("1 eV").unwrap().0, EV / HBAR);
        assert_eq!(Energy::parse("2 J").unwrap().0, 2.0);
        assert_eq!(Dipole::parse("1 debye").unwrap().0, DEBYE);
        assert_eq!(Time::parse("3 us").unwrap().0, 3e-6);
    }

    #[test]
    fn rejects_missing_or_unknown_units() {
        assert!(Length::parse("100").is_err());
        assert!(Length::parse("100 furlong").is_err());
        assert!(Temperature::parse("nan K").is_err());
        assert!(Energy::parse("1 K").is_err());
    }

    #[test]
    fn si_text_reparses_exactly() {
        let l = Length::parse("123.456 nm").unwrap();
        let text = serde_json::to_string(&l).unwrap();
        let back: Length = serde_json::from_str(&text).unwrap();
        assert_eq!(back, l);
    }
}
