//! Parametric transformer templates, their sampling spaces and the
//! key=value text records used in manifests and reports.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Number of entries in [`XfmrGeometry::feature_vector`].
pub const FEATURE_LEN: usize = 6;

/// Maximum turn count on either winding.
pub const MAX_TURNS: u32 = 4;

/// Minimum trace width in micrometers.
pub const MIN_TRACE_WIDTH_UM: f64 = 1.0;

const SAMPLE_RETRIES: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("turn count {field}={value} outside 1..={MAX_TURNS}")]
    Turns { field: &'static str, value: u32 },
    #[error("one-to-one template requires M = N = 1, got {m}:{n}")]
    OneToOneTurns { m: u32, n: u32 },
    #[error("{field} must be positive and finite, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("trace_width {0} um below the {MIN_TRACE_WIDTH_UM} um minimum")]
    TraceTooNarrow(f64),
    #[error(
        "windings do not fit: outer_dim {outer_dim} um <= 2*{turns}*(trace_width + trace_spacing) = {needed} um"
    )]
    Footprint { outer_dim: f64, turns: u32, needed: f64 },
    #[error("invalid interval for {field}: [{lower}, {upper}]")]
    Interval { field: &'static str, lower: f64, upper: f64 },
    #[error("parameter space allows no (M, N) pair for {0}")]
    NoTurnPairs(XfmrTemplate),
    #[error("turn pair {m}:{n} not allowed for {template}")]
    TurnPair { template: XfmrTemplate, m: u32, n: u32 },
    #[error("no feasible geometry after {tries} draws; last violation: {last}")]
    Infeasible { tries: usize, last: Box<GeometryError> },
    #[error("feature vector must have {FEATURE_LEN} entries, got {0}")]
    FeatureLength(usize),
    #[error("unknown template '{0}'")]
    UnknownTemplate(String),
    #[error("geometry record: {0}")]
    Record(String),
}

/// Transformer layout family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum XfmrTemplate {
    OneToOne,
    MToN,
    ParallelInductor,
    EightShaped,
}

impl XfmrTemplate {
    pub const ALL: [XfmrTemplate; 4] = [
        XfmrTemplate::OneToOne,
        XfmrTemplate::MToN,
        XfmrTemplate::ParallelInductor,
        XfmrTemplate::EightShaped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            XfmrTemplate::OneToOne => "OneToOne",
            XfmrTemplate::MToN => "MToN",
            XfmrTemplate::ParallelInductor => "ParallelInductor",
            XfmrTemplate::EightShaped => "EightShaped",
        }
    }

    /// Number of spiral lobes per winding.
    pub fn lobes(self) -> u32 {
        match self {
            XfmrTemplate::EightShaped => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for XfmrTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for XfmrTemplate {
    type Err = GeometryError;

    /// Accepts the canonical names and the short CLI aliases
    /// (`11`, `1:1`, `mn`, `par`, `parallel`, `eight`, `8`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "onetoone" | "11" | "1:1" | "one-to-one" => Ok(XfmrTemplate::OneToOne),
            "mton" | "mn" | "m:n" => Ok(XfmrTemplate::MToN),
            "parallelinductor" | "par" | "parallel" => Ok(XfmrTemplate::ParallelInductor),
            "eightshaped" | "eight" | "8" | "8-shaped" => Ok(XfmrTemplate::EightShaped),
            _ => Err(GeometryError::UnknownTemplate(s.to_string())),
        }
    }
}

/// One transformer layout candidate. Lengths are in micrometers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XfmrGeometry {
    pub template: XfmrTemplate,
    pub turns_primary: u32,
    pub turns_secondary: u32,
    pub outer_dim: f64,
    pub trace_width: f64,
    pub trace_spacing: f64,
    pub winding_gap: f64,
}

impl XfmrGeometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        for (field, value) in [
            ("turns_primary", self.turns_primary),
            ("turns_secondary", self.turns_secondary),
        ] {
            if !(1..=MAX_TURNS).contains(&value) {
                return Err(GeometryError::Turns { field, value });
            }
        }
        if self.template == XfmrTemplate::OneToOne
            && (self.turns_primary != 1 || self.turns_secondary != 1)
        {
            return Err(GeometryError::OneToOneTurns {
                m: self.turns_primary,
                n: self.turns_secondary,
            });
        }
        for (field, value) in [
            ("outer_dim", self.outer_dim),
            ("trace_width", self.trace_width),
            ("trace_spacing", self.trace_spacing),
            ("winding_gap", self.winding_gap),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(GeometryError::NonPositive { field, value });
            }
        }
        if self.trace_width < MIN_TRACE_WIDTH_UM {
            return Err(GeometryError::TraceTooNarrow(self.trace_width));
        }
        let turns = self.turns_primary.max(self.turns_secondary);
        let needed = 2.0 * turns as f64 * (self.trace_width + self.trace_spacing);
        if self.outer_dim <= needed {
            return Err(GeometryError::Footprint {
                outer_dim: self.outer_dim,
                turns,
                needed,
            });
        }
        Ok(())
    }

    /// Layout area in mm². Eight-shaped layouts occupy two square lobes.
    pub fn area_mm2(&self) -> f64 {
        let side_mm = self.outer_dim * 1e-3;
        self.template.lobes() as f64 * side_mm * side_mm
    }

    /// `[M, N, outer_dim, trace_width, trace_spacing, winding_gap]`.
    pub fn feature_vector(&self) -> [f64; FEATURE_LEN] {
        [
            self.turns_primary as f64,
            self.turns_secondary as f64,
            self.outer_dim,
            self.trace_width,
            self.trace_spacing,
            self.winding_gap,
        ]
    }

    /// Inverse of [`feature_vector`](Self::feature_vector) for a known template.
    pub fn from_features(template: XfmrTemplate, v: &[f64]) -> Result<Self, GeometryError> {
        if v.len() != FEATURE_LEN {
            return Err(GeometryError::FeatureLength(v.len()));
        }
        let turns = |x: f64, field: &'static str| {
            let r = x.round();
            if (x - r).abs() > 1e-9 || r < 1.0 || r > MAX_TURNS as f64 {
                Err(GeometryError::Record(format!("{field} is not a turn count: {x}")))
            } else {
                Ok(r as u32)
            }
        };
        let g = XfmrGeometry {
            template,
            turns_primary: turns(v[0], "turns_primary")?,
            turns_secondary: turns(v[1], "turns_secondary")?,
            outer_dim: v[2],
            trace_width: v[3],
            trace_spacing: v[4],
            winding_gap: v[5],
        };
        g.validate()?;
        Ok(g)
    }

    /// Key=value text block, one field per line.
    pub fn to_record(&self) -> String {
        format!(
            "template={}\nturns_primary={}\nturns_secondary={}\nouter_dim_um={}\ntrace_width_um={}\ntrace_spacing_um={}\nwinding_gap_um={}\n",
            self.template,
            self.turns_primary,
            self.turns_secondary,
            self.outer_dim,
            self.trace_width,
            self.trace_spacing,
            self.winding_gap
        )
    }

    /// Parses a block written by [`to_record`](Self::to_record). Blank lines
    /// and `#` comments are skipped; every field must appear exactly once.
    pub fn from_record(text: &str) -> Result<Self, GeometryError> {
        let mut template = None;
        let mut ints: [Option<u32>; 2] = [None; 2];
        let mut reals: [Option<f64>; 4] = [None; 4];
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| GeometryError::Record(format!("expected key=value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let slot_int = match key {
                "turns_primary" => Some(0),
                "turns_secondary" => Some(1),
                _ => None,
            };
            let slot_real = match key {
                "outer_dim_um" => Some(0),
                "trace_width_um" => Some(1),
                "trace_spacing_um" => Some(2),
                "winding_gap_um" => Some(3),
                _ => None,
            };
            if key == "template" {
                if template.is_some() {
                    return Err(GeometryError::Record("duplicate key 'template'".into()));
                }
                template = Some(value.parse::<XfmrTemplate>()?);
            } else if let Some(i) = slot_int {
                let v = value
                    .parse::<u32>()
                    .map_err(|_| GeometryError::Record(format!("{key}: not an integer '{value}'")))?;
                if ints[i].replace(v).is_some() {
                    return Err(GeometryError::Record(format!("duplicate key '{key}'")));
                }
            } else if let Some(i) = slot_real {
                let v = value
                    .parse::<f64>()
                    .map_err(|_| GeometryError::Record(format!("{key}: not a number '{value}'")))?;
                if reals[i].replace(v).is_some() {
                    return Err(GeometryError::Record(format!("duplicate key '{key}'")));
                }
            } else {
                return Err(GeometryError::Record(format!("unknown key '{key}'")));
            }
        }
        let missing = |k: &str| GeometryError::Record(format!("missing key '{k}'"));
        let g = XfmrGeometry {
            template: template.ok_or_else(|| missing("template"))?,
            turns_primary: ints[0].ok_or_else(|| missing("turns_primary"))?,
            turns_secondary: ints[1].ok_or_else(|| missing("turns_secondary"))?,
            outer_dim: reals[0].ok_or_else(|| missing("outer_dim_um"))?,
            trace_width: reals[1].ok_or_else(|| missing("trace_width_um"))?,
            trace_spacing: reals[2].ok_or_else(|| missing("trace_spacing_um"))?,
            winding_gap: reals[3].ok_or_else(|| missing("winding_gap_um"))?,
        };
        g.validate()?;
        Ok(g)
    }
}

/// Closed interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Interval { lower, upper }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    fn check(&self, field: &'static str) -> Result<(), GeometryError> {
        if self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper {
            Ok(())
        } else {
            Err(GeometryError::Interval {
                field,
                lower: self.lower,
                upper: self.upper,
            })
        }
    }
}

/// Sampling ranges for the continuous geometry fields plus allowed turn pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    pub outer_dim: Interval,
    pub trace_width: Interval,
    pub trace_spacing: Interval,
    pub winding_gap: Interval,
    pub turn_pairs: Vec<(u32, u32)>,
}

impl ParamSpace {
    /// Default ranges for a template. Turn pairs: 1:1 only for the
    /// one-to-one and eight-shaped templates, all 16 pairs for M:N,
    /// and {1:1, 2:2} for the parallel-inductor template.
    pub fn default_for(template: XfmrTemplate) -> Self {
        let turn_pairs = match template {
            XfmrTemplate::OneToOne | XfmrTemplate::EightShaped => vec![(1, 1)],
            XfmrTemplate::MToN => (1..=MAX_TURNS)
                .flat_map(|m| (1..=MAX_TURNS).map(move |n| (m, n)))
                .collect(),
            XfmrTemplate::ParallelInductor => vec![(1, 1), (2, 2)],
        };
        ParamSpace {
            outer_dim: Interval::new(40.0, 150.0),
            trace_width: Interval::new(2.0, 12.0),
            trace_spacing: Interval::new(2.0, 10.0),
            winding_gap: Interval::new(1.0, 6.0),
            turn_pairs,
        }
    }

    /// Same ranges with the turn pairs restricted to a single `(m, n)`.
    pub fn with_turns(mut self, m: u32, n: u32) -> Self {
        self.turn_pairs = vec![(m, n)];
        self
    }

    /// A space concentrated on one geometry: each interval is widened by a
    /// few ulps so it stays a valid (non-empty) interval.
    pub fn point(g: &XfmrGeometry) -> Self {
        let widen = |x: f64| Interval::new(x, x + 4.0 * f64::EPSILON * x.abs().max(1.0));
        ParamSpace {
            outer_dim: widen(g.outer_dim),
            trace_width: widen(g.trace_width),
            trace_spacing: widen(g.trace_spacing),
            winding_gap: widen(g.winding_gap),
            turn_pairs: vec![(g.turns_primary, g.turns_secondary)],
        }
    }

    pub fn validate(&self, template: XfmrTemplate) -> Result<(), GeometryError> {
        self.outer_dim.check("outer_dim")?;
        self.trace_width.check("trace_width")?;
        self.trace_spacing.check("trace_spacing")?;
        self.winding_gap.check("winding_gap")?;
        if self.turn_pairs.is_empty() {
            return Err(GeometryError::NoTurnPairs(template));
        }
        for &(m, n) in &self.turn_pairs {
            let ok = (1..=MAX_TURNS).contains(&m)
                && (1..=MAX_TURNS).contains(&n)
                && (template != XfmrTemplate::OneToOne || (m == 1 && n == 1));
            if !ok {
                return Err(GeometryError::TurnPair { template, m, n });
            }
        }
        Ok(())
    }

    /// Continuous box `(outer_dim, trace_width, trace_spacing, winding_gap)`.
    pub fn continuous_bounds(&self) -> [Interval; 4] {
        [self.outer_dim, self.trace_width, self.trace_spacing, self.winding_gap]
    }

    /// Draws one geometry from `rng`, rejecting draws that violate the
    /// footprint (or any other) invariant.
    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        template: XfmrTemplate,
        rng: &mut R,
    ) -> Result<XfmrGeometry, GeometryError> {
        self.validate(template)?;
        let draw = |iv: Interval, rng: &mut R| iv.lower + rng.random::<f64>() * iv.width();
        let mut last = None;
        for _ in 0..SAMPLE_RETRIES {
            let (m, n) = self.turn_pairs[rng.random_range(0..self.turn_pairs.len())];
            let g = XfmrGeometry {
                template,
                turns_primary: m,
                turns_secondary: n,
                outer_dim: draw(self.outer_dim, rng),
                trace_width: draw(self.trace_width, rng),
                trace_spacing: draw(self.trace_spacing, rng),
                winding_gap: draw(self.winding_gap, rng),
            };
            match g.validate() {
                Ok(()) => return Ok(g),
                Err(e) => last = Some(e),
            }
        }
        Err(GeometryError::Infeasible {
            tries: SAMPLE_RETRIES,
            last: Box::new(last.expect("at least one draw")),
        })
    }
}

/// Deterministic single draw for a seed.
pub fn sample_geometry(
    space: &ParamSpace,
    template: XfmrTemplate,
    rng_seed: u64,
) -> Result<XfmrGeometry, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    space.sample_with(template, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn mn() -> XfmrGeometry {
        XfmrGeometry {
            template: XfmrTemplate::MToN,
            turns_primary: 2,
            turns_secondary: 3,
            outer_dim: 100.0,
            trace_width: 5.0,
            trace_spacing: 3.0,
            winding_gap: 2.0,
        }
    }

    #[test]
    fn all_sixteen_turn_pairs_are_reached() {
        let space = ParamSpace::default_for(XfmrTemplate::MToN);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seen: HashSet<_> = (0..2000)
            .map(|_| {
                let g = space.sample_with(XfmrTemplate::MToN, &mut rng).unwrap();
                (g.turns_primary, g.turns_secondary)
            })
            .collect();
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn point_space_returns_the_corner() {
        let g = mn();
        let s = sample_geometry(&ParamSpace::point(&g), XfmrTemplate::MToN, 9).unwrap();
        assert_eq!(s.turns_primary, 2);
        assert_eq!(s.turns_secondary, 3);
        for (a, b) in s.feature_vector().iter().zip(g.feature_vector()) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let space = ParamSpace::default_for(XfmrTemplate::EightShaped);
        let a = sample_geometry(&space, XfmrTemplate::EightShaped, 42).unwrap();
        let b = sample_geometry(&space, XfmrTemplate::EightShaped, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_space_reports_the_violation() {
        let space = ParamSpace {
            outer_dim: Interval::new(10.0, 12.0),
            trace_width: Interval::new(5.0, 6.0),
            trace_spacing: Interval::new(5.0, 6.0),
            winding_gap: Interval::new(1.0, 2.0),
            turn_pairs: vec![(4, 4)],
        };
        match sample_geometry(&space, XfmrTemplate::MToN, 1) {
            Err(GeometryError::Infeasible { tries, last }) => {
                assert_eq!(tries, 1000);
                assert!(matches!(*last, GeometryError::Footprint { .. }));
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn area_values() {
        let mut g = mn();
        assert!((g.area_mm2() - 0.01).abs() < 1e-15);
        g.template = XfmrTemplate::EightShaped;
        assert!((g.area_mm2() - 0.02).abs() < 1e-15);
        let a = g.area_mm2();
        g.outer_dim *= 2.0;
        assert!((g.area_mm2() / a - 4.0).abs() < 1e-12);
    }

    #[test]
    fn feature_layout() {
        let g = XfmrGeometry {
            template: XfmrTemplate::OneToOne,
            turns_primary: 1,
            turns_secondary: 1,
            ..mn()
        };
        let v = g.feature_vector();
        assert_eq!(&v[..2], &[1.0, 1.0]);
        let mut h = g;
        h.trace_width += 0.5;
        let w = h.feature_vector();
        let diff: Vec<usize> = (0..FEATURE_LEN).filter(|&i| v[i] != w[i]).collect();
        assert_eq!(diff, vec![3]);
        assert_eq!(XfmrGeometry::from_features(g.template, &v).unwrap(), g);
    }

    #[test]
    fn validation_errors() {
        let mut g = mn();
        g.turns_primary = 5;
        assert!(matches!(g.validate(), Err(GeometryError::Turns { .. })));
        let mut g = mn();
        g.template = XfmrTemplate::OneToOne;
        assert!(matches!(g.validate(), Err(GeometryError::OneToOneTurns { .. })));
        let mut g = mn();
        g.trace_width = 0.5;
        assert!(matches!(g.validate(), Err(GeometryError::TraceTooNarrow(_))));
        let mut g = mn();
        g.outer_dim = 48.0;
        assert!(matches!(g.validate(), Err(GeometryError::Footprint { .. })));
        let mut g = mn();
        g.winding_gap = f64::NAN;
        assert!(matches!(g.validate(), Err(GeometryError::NonPositive { .. })));
    }

    #[test]
    fn record_round_trip_and_errors() {
        let g = mn();
        assert_eq!(XfmrGeometry::from_record(&g.to_record()).unwrap(), g);
        let dup = format!("{}turns_primary=1\n", g.to_record());
        assert!(XfmrGeometry::from_record(&dup).is_err());
        let missing = g.to_record().replace("winding_gap_um=2\n", "");
        assert!(XfmrGeometry::from_record(&missing).is_err());
        assert!(XfmrGeometry::from_record("template=MToN\nbogus=1\n").is_err());
    }

    #[test]
    fn template_aliases() {
        assert_eq!("mn".parse::<XfmrTemplate>().unwrap(), XfmrTemplate::MToN);
        assert_eq!("11".parse::<XfmrTemplate>().unwrap(), XfmrTemplate::OneToOne);
        for t in XfmrTemplate::ALL {
            assert_eq!(t.name().parse::<XfmrTemplate>().unwrap(), t);
        }
        assert!("spiral".parse::<XfmrTemplate>().is_err());
    }
}
