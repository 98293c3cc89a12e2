//! Command-line units: angles as multiples of π, MHz, µs and "inf".

use std::f64::consts::PI;

/// Parses `pi`, `-pi/2`, `4pi/3`, `0.5pi`, `2*pi/5` or a plain number in radians.
pub fn parse_angle(text: &str) -> Result<f64, String> {
    let s: String = text.trim().to_lowercase().replace('π', "pi").split_whitespace().collect();
    if s.is_empty() {
        return Err("empty angle".into());
    }
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n, Some(d)),
        None => (s.as_str(), None),
    };
    let value = match num.strip_suffix("pi") {
        Some(coef) => {
            let coef = coef.strip_suffix('*').unwrap_or(coef);
            let c = match coef {
                "" | "+" => 1.0,
                "-" => -1.0,
                c => c.parse::<f64>().map_err(|_| format!("bad angle {text:?}"))?,
            };
            c * PI
        }
        None => num.parse::<f64>().map_err(|_| format!("bad angle {text:?}"))?,
    };
    let value = match den {
        Some(d) => {
            let d: f64 = d.parse().map_err(|_| format!("bad angle {text:?}"))?;
            if d == 0.0 {
                return Err(format!("bad angle {text:?}: zero denominator"));
            }
            value / d
        }
        None => value,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("bad angle {text:?}"))
    }
}

/// A positive number, or `None` for `inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaybeInf(pub Option<f64>);

pub fn parse_maybe_inf(text: &str) -> Result<MaybeInf, String> {
    parse_positive_or_inf(text).map(MaybeInf)
}

fn parse_positive_or_inf(text: &str) -> Result<Option<f64>, String> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Some(v)),
        _ => Err(format!("expected a positive number or \"inf\", got {text:?}")),
    }
}

/// Comma-separated level list, e.g. `1,2`.
pub fn parse_levels(text: &str) -> Result<Vec<usize>, String> {
    text.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad level list {text:?}")))
        .collect()
}

/// Angle as a short label for file names and logs, e.g. `4pi_3`.
pub fn angle_label(theta: f64) -> String {
    let x = theta / PI;
    for den in 1..=24u32 {
        let num = x * den as f64;
        if (num - num.round()).abs() < 1e-9 {
            let n = num.round() as i64;
            return match (n, den) {
                (0, _) => "0".into(),
                (1, 1) => "pi".into(),
                (-1, 1) => "-pi".into(),
                (n, 1) => format!("{n}pi"),
                (1, d) => format!("pi_{d}"),
                (-1, d) => format!("-pi_{d}"),
                (n, d) => format!("{n}pi_{d}"),
            };
        }
    }
    format!("{theta:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles() {
        let cases = [("pi", PI), ("-pi/2", -PI / 2.0), ("4pi/3", 4.0 * PI / 3.0), ("0.5pi", PI / 2.0), ("2*pi/5", 0.4 * PI), ("4π/3", 4.0 * PI / 3.0), ("1.25", 1.25)];
        for (s, v) in cases {
            assert!((parse_angle(s).unwrap() - v).abs() < 1e-15, "{s}");
        }
        for bad in ["", "pie", "pi/0", "x/3"] {
            assert!(parse_angle(bad).is_err(), "{bad}");
        }
        assert_eq!(angle_label(4.0 * PI / 3.0), "4pi_3");
        assert_eq!(angle_label(-PI), "-pi");
    }

    #[test]
    fn infinities_and_levels() {
        assert_eq!(parse_maybe_inf("inf").unwrap(), MaybeInf(None));
        assert_eq!(parse_maybe_inf("60").unwrap(), MaybeInf(Some(60.0)));
        assert!(parse_maybe_inf("-1").is_err());
        assert_eq!(parse_levels("1, 2").unwrap(), vec![1, 2]);
        assert!(parse_levels("1;2").is_err());
    }
}
