//! Plain-text run configuration: one `key = value` per line, `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use crate::counter::CountOptions;
use crate::error::{Error, Result};
use crate::estimators::DEFAULT_WINDOW_FRACTION;
use crate::expr::ScalarField;
use crate::flow::DEFAULT_STEP;
use crate::geometry::{ChartPoint, SurfaceKind, SurfaceModel};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "MAGFLOW_WORKERS";

/// Every accepted key with its help text.
pub const KEYS: &[(&str, &str)] = &[
    ("kind", "surface: flat_torus | hyperbolic_plane | conformal_torus"),
    ("Lx", "torus period in u"),
    ("Ly", "torus period in v"),
    ("lambda", "conformal exponent λ(u, v) (conformal_torus only)"),
    ("b", "field profile b(u, v) [default 1]"),
    ("s", "field strength [default 0]"),
    ("h", "integration step [default 1e-3]"),
    ("seed", "random seed [default 0]"),
    ("workers", "worker threads [default from MAGFLOW_WORKERS, else all cores]"),
    ("renormalize", "project back to the unit tangent bundle after each step [default true]"),
    ("T", "time horizon"),
    ("T_list", "comma-separated horizons for lemma-check"),
    ("u0", "initial point, first coordinate [default 0]"),
    ("v0", "initial point, second coordinate [default 1 on the half plane, else 0]"),
    ("angle", "initial euclidean direction angle [default 0]"),
    ("x", "source point \"u,v\""),
    ("y", "target point \"u,v\""),
    ("n_theta", "Liouville samples (or directions on the half plane) [default 1000]"),
    ("n_pairs", "point pairs for the counting side [default 1000]"),
    ("n_angle", "angle cells of the count grid [default 720]"),
    ("n_time", "time cells of the count grid [default (T - t_min)/0.05]"),
    ("tol_pos", "position tolerance of a root [default 1e-6]"),
    ("t_min", "shortest counted trajectory [default 10 h]"),
    ("max_newton", "Newton iteration cap [default 12]"),
    ("count_step", "integration step of the shooting map [default h]"),
    ("scan_step", "integration step of the coarse count scan [default 0.05]"),
    ("allow_coincident", "accept x = y in count [default false]"),
    ("reference", "reference entropy rate for entropy-rate"),
    ("window_fraction", "tail fraction of the series used by growth fits [default 0.5]"),
    ("out", "output directory [default .]"),
];

/// One problem found while reading a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    /// 1-based line of the file, `None` for flags and missing keys.
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: ")?,
            None => write!(f, "command line: ")?,
        }
        if let Some(k) = &self.key {
            write!(f, "{k}: ")?;
        }
        write!(f, "{}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl From<ConfigErrors> for Error {
    fn from(e: ConfigErrors) -> Self {
        Error::Config(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: SurfaceKind,
    pub periods: Option<(f64, f64)>,
    pub lambda: Option<String>,
    pub b: String,
    pub s: f64,
    pub h: f64,
    pub seed: u64,
    pub workers: Option<usize>,
    pub renormalize: bool,
    pub t: Option<f64>,
    pub t_list: Option<Vec<f64>>,
    pub start: ChartPoint,
    pub angle: f64,
    pub x: Option<ChartPoint>,
    pub y: Option<ChartPoint>,
    pub n_theta: usize,
    pub n_pairs: usize,
    pub count: CountOptions,
    pub reference: Option<f64>,
    pub window_fraction: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: Option<usize>,
}

/// Splits a document into entries, reporting malformed, unknown and repeated keys.
fn read_entries(text: &str, issues: &mut Vec<ConfigIssue>) -> BTreeMap<String, Entry> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            issues.push(ConfigIssue {
                line: Some(line),
                key: None,
                message: format!("expected `key = value`, found `{content}`"),
            });
            continue;
        };
        let key = k.trim().to_string();
        if !KEYS.iter().any(|(name, _)| *name == key) {
            issues.push(ConfigIssue {
                line: Some(line),
                key: Some(key),
                message: "unknown key".into(),
            });
            continue;
        }
        if let Some(prev) = map.get(&key).and_then(|e: &Entry| e.line) {
            issues.push(ConfigIssue {
                line: Some(line),
                key: Some(key),
                message: format!("repeated (first set on line {prev})"),
            });
            continue;
        }
        map.insert(
            key,
            Entry {
                value: unquote(v.trim()).to_string(),
                line: Some(line),
            },
        );
    }
    map
}

fn unquote(s: &str) -> &str {
    for q in ['"', '\''] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return &s[1..s.len() - 1];
        }
    }
    s
}

/// Parses a configuration document; reports every problem found.
pub fn parse_config(text: &str) -> std::result::Result<RunConfig, ConfigErrors> {
    parse_with_overrides(text, &[])
}

/// Parses a document with `(key, value)` overrides from the command line.
pub fn parse_with_overrides(
    text: &str,
    overrides: &[(String, String)],
) -> std::result::Result<RunConfig, ConfigErrors> {
    let mut issues = Vec::new();
    let mut map = read_entries(text, &mut issues);
    for (k, v) in overrides {
        if !KEYS.iter().any(|(name, _)| name == k) {
            issues.push(ConfigIssue {
                line: None,
                key: Some(k.clone()),
                message: "unknown key".into(),
            });
            continue;
        }
        map.insert(
            k.clone(),
            Entry {
                value: v.clone(),
                line: None,
            },
        );
    }
    let mut b = Builder {
        map: &map,
        issues: &mut issues,
    };
    let cfg = b.build();
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(issues))
    }
}

struct Builder<'a> {
    map: &'a BTreeMap<String, Entry>,
    issues: &'a mut Vec<ConfigIssue>,
}

impl Builder<'_> {
    fn issue(&mut self, key: &str, message: String) {
        let line = self.map.get(key).and_then(|e| e.line);
        self.issues.push(ConfigIssue {
            line,
            key: Some(key.to_string()),
            message,
        });
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|e| e.value.as_str())
    }

    fn get<T>(&mut self, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Option<T> {
        let raw = self.raw(key)?.to_string();
        match parse(&raw) {
            Ok(v) => Some(v),
            Err(m) => {
                self.issue(key, format!("cannot parse `{raw}`: {m}"));
                None
            }
        }
    }

    fn real(&mut self, key: &str) -> Option<f64> {
        self.get(key, |s| match s.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            Ok(_) => Err("not finite".into()),
            Err(e) => Err(e.to_string()),
        })
    }

    fn positive(&mut self, key: &str) -> Option<f64> {
        let x = self.real(key)?;
        if x > 0.0 {
            Some(x)
        } else {
            self.issue(key, format!("must be positive, got {x}"));
            None
        }
    }

    fn count(&mut self, key: &str) -> Option<usize> {
        let n = self.get(key, |s| s.parse::<usize>().map_err(|e| e.to_string()))?;
        if n == 0 {
            self.issue(key, "must be at least 1".into());
            return None;
        }
        Some(n)
    }

    fn flag(&mut self, key: &str) -> Option<bool> {
        self.get(key, |s| match s.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err("expected true or false".into()),
        })
    }

    fn point(&mut self, key: &str) -> Option<ChartPoint> {
        self.get(key, |s| {
            let parts: Vec<&str> = s.split(',').map(str::trim).collect();
            match parts.as_slice() {
                [u, v] => Ok(ChartPoint::new(
                    u.parse().map_err(|e| format!("{e}"))?,
                    v.parse().map_err(|e| format!("{e}"))?,
                )),
                _ => Err("expected \"u,v\"".into()),
            }
        })
    }

    fn expression(&mut self, key: &str) -> Option<String> {
        let raw = self.raw(key)?.to_string();
        match ScalarField::parse(&raw) {
            Ok(_) => Some(raw),
            Err(e) => {
                self.issue(key, format!("{e}"));
                None
            }
        }
    }

    fn build(&mut self) -> RunConfig {
        let kind = match self.raw("kind") {
            None => {
                self.issue("kind", "missing required field".into());
                SurfaceKind::FlatTorus
            }
            Some("flat_torus") => SurfaceKind::FlatTorus,
            Some("hyperbolic_plane") => SurfaceKind::HyperbolicPlane,
            Some("conformal_torus") => SurfaceKind::ConformalTorus,
            Some(other) => {
                let m = format!("unknown surface `{other}`");
                self.issue("kind", m);
                SurfaceKind::FlatTorus
            }
        };

        let periods = if kind.is_torus() {
            for key in ["Lx", "Ly"] {
                if self.raw(key).is_none() {
                    self.issue(key, format!("missing required field for {kind:?}"));
                }
            }
            match (self.positive("Lx"), self.positive("Ly")) {
                (Some(lx), Some(ly)) => Some((lx, ly)),
                _ => None,
            }
        } else {
            for key in ["Lx", "Ly"] {
                if self.raw(key).is_some() {
                    self.issue(key, "not allowed for hyperbolic_plane".into());
                }
            }
            None
        };

        let lambda = match kind {
            SurfaceKind::ConformalTorus => {
                if self.raw("lambda").is_none() {
                    self.issue("lambda", "missing required field for conformal_torus".into());
                }
                self.expression("lambda")
            }
            _ => {
                if self.raw("lambda").is_some() {
                    let name = if kind == SurfaceKind::FlatTorus {
                        "flat_torus"
                    } else {
                        "hyperbolic_plane"
                    };
                    self.issue("lambda", format!("λ not allowed for {name}"));
                }
                None
            }
        };

        let h = self.positive("h").unwrap_or(DEFAULT_STEP);
        let mut count = CountOptions::with_step(h);
        if let Some(n) = self.count("n_angle") {
            count.n_angle = n;
        }
        count.n_time = self.count("n_time");
        if let Some(x) = self.positive("tol_pos") {
            count.tol_pos = x;
        }
        if let Some(x) = self.positive("t_min") {
            count.t_min = x;
        }
        if let Some(n) = self.count("max_newton") {
            count.max_newton = n;
        }
        if let Some(x) = self.positive("count_step") {
            count.step = x;
        }
        if let Some(x) = self.positive("scan_step") {
            count.scan_step = x;
        }
        if let Some(f) = self.flag("allow_coincident") {
            count.allow_coincident = f;
        }

        let t_list = self.get("T_list", |s| {
            s.split(',')
                .map(|p| {
                    let t: f64 = p.trim().parse().map_err(|e| format!("{e}"))?;
                    if t.is_finite() && t >= 0.0 {
                        Ok(t)
                    } else {
                        Err(format!("horizon {t} must be finite and nonnegative"))
                    }
                })
                .collect::<std::result::Result<Vec<f64>, String>>()
        });
        let t = self.positive("T");
        let window_fraction = match self.positive("window_fraction") {
            Some(w) if w > 1.0 => {
                self.issue("window_fraction", format!("must be at most 1, got {w}"));
                DEFAULT_WINDOW_FRACTION
            }
            Some(w) => w,
            None => DEFAULT_WINDOW_FRACTION,
        };
        let workers = self.count("workers").or_else(|| {
            std::env::var(WORKERS_ENV)
                .ok()
                .and_then(|v| v.trim().parse::<usize>().ok())
                .filter(|n| *n > 0)
        });

        let default_v0 = if kind == SurfaceKind::HyperbolicPlane { 1.0 } else { 0.0 };
        let start = ChartPoint::new(
            self.real("u0").unwrap_or(0.0),
            self.real("v0").unwrap_or(default_v0),
        );
        if kind == SurfaceKind::HyperbolicPlane && !(start.v > 0.0) {
            self.issue("v0", format!("must be positive on the half plane, got {}", start.v));
        }

        RunConfig {
            kind,
            periods,
            lambda,
            b: self.expression("b").unwrap_or_else(|| "1".into()),
            s: self.real("s").unwrap_or(0.0),
            h,
            seed: self.get("seed", |s| s.parse::<u64>().map_err(|e| e.to_string())).unwrap_or(0),
            workers,
            renormalize: self.flag("renormalize").unwrap_or(true),
            t,
            t_list,
            start,
            angle: self.real("angle").unwrap_or(0.0),
            x: self.point("x"),
            y: self.point("y"),
            n_theta: self.count("n_theta").unwrap_or(1000),
            n_pairs: self.count("n_pairs").unwrap_or(1000),
            count,
            reference: self.real("reference"),
            window_fraction,
            out: self.raw("out").map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
        }
    }
}

impl RunConfig {
    pub fn surface(&self) -> Result<SurfaceModel> {
        let profile = ScalarField::parse(&self.b)?;
        let base = match self.kind {
            SurfaceKind::HyperbolicPlane => SurfaceModel::hyperbolic_plane(),
            SurfaceKind::FlatTorus | SurfaceKind::ConformalTorus => {
                let (lx, ly) = self
                    .periods
                    .ok_or_else(|| Error::Config("torus periods are not set".into()))?;
                match &self.lambda {
                    Some(src) if self.kind == SurfaceKind::ConformalTorus => {
                        SurfaceModel::conformal_torus(lx, ly, ScalarField::parse(src)?)?
                    }
                    _ => SurfaceModel::flat_torus(lx, ly)?,
                }
            }
        };
        Ok(base.with_field(profile, self.s))
    }

    pub fn require_t(&self) -> Result<f64> {
        self.t.ok_or_else(|| Error::Config("T: missing required field".into()))
    }

    /// `T_list`, or `[T]` when only `T` is set.
    pub fn horizons(&self) -> Result<Vec<f64>> {
        match (&self.t_list, self.t) {
            (Some(l), _) if !l.is_empty() => Ok(l.clone()),
            (_, Some(t)) => Ok(vec![t]),
            _ => Err(Error::Config("T_list: missing required field (or set T)".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_flat_document_gets_defaults() {
        let cfg = parse_config("kind = flat_torus\nLx = 1\nLy = 1\ns = 0\n").unwrap();
        assert_eq!(cfg.kind, SurfaceKind::FlatTorus);
        assert_eq!(cfg.periods, Some((1.0, 1.0)));
        assert_eq!(cfg.h, 1e-3);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.b, "1");
        assert!(cfg.renormalize);
        assert_eq!(cfg.count, CountOptions::with_step(1e-3));
        assert_eq!(cfg.surface().unwrap().area().unwrap(), 1.0);
    }

    #[test]
    fn lambda_is_rejected_on_flat_torus() {
        let err = parse_config("kind = flat_torus\nLx = 1\nLy = 1\nlambda = \"0.1*sin(2*pi*u)\"\n").unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert_eq!(err.0[0].line, Some(4));
        assert!(err.0[0].message.contains("flat_torus"));
    }

    #[test]
    fn bad_value_names_key_and_line() {
        let err = parse_config("# header\nkind = flat_torus\nLx = 1\nLy = 1\ns = abc\n").unwrap_err();
        assert_eq!(err.0.len(), 1);
        let msg = err.to_string();
        assert!(msg.contains("line 5") && msg.contains("s:"), "{msg}");
    }

    #[test]
    fn all_errors_are_reported() {
        let text = "kind = conformal_torus\nLx = -1\nfoo = 3\nb = sin(\nseed = x\njunk line\n";
        let err = parse_config(text).unwrap_err();
        let keys: Vec<_> = err.0.iter().map(|e| e.key.clone()).collect();
        for k in ["Lx", "Ly", "foo", "b", "seed", "lambda"] {
            assert!(keys.contains(&Some(k.to_string())), "{k} missing in {err}");
        }
        assert!(err.0.iter().any(|e| e.key.is_none() && e.line == Some(6)));
    }

    #[test]
    fn overrides_take_precedence() {
        let text = "kind = flat_torus\nLx = 1\nLy = 1\nseed = 4\nT = 2\n";
        let o = vec![("seed".to_string(), "9".to_string()), ("x".to_string(), "0.1, 0.2".to_string())];
        let cfg = parse_with_overrides(text, &o).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.x, Some(ChartPoint::new(0.1, 0.2)));
        assert_eq!(cfg.horizons().unwrap(), vec![2.0]);
        let bad = vec![("nope".to_string(), "1".to_string())];
        assert!(parse_with_overrides(text, &bad).is_err());
    }

    #[test]
    fn conformal_document_builds_surface() {
        let text = "kind = conformal_torus\nLx = 1\nLy = 1\nlambda = 0.1*sin(2*pi*u)*cos(2*pi*v)\n\
                    b = 1+0.5*sin(2*pi*v)\ns = 0.7\nT_list = 2, 4\ncount_step = 0.01\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.t_list, Some(vec![2.0, 4.0]));
        assert_eq!(cfg.count.step, 0.01);
        assert_eq!(cfg.count.t_min, 0.01);
        let s = cfg.surface().unwrap();
        assert_eq!(s.kind(), SurfaceKind::ConformalTorus);
        assert_eq!(s.field_strength(), 0.7);
    }

    #[test]
    fn half_plane_rejects_periods() {
        assert!(parse_config("kind = hyperbolic_plane\nLx = 1\n").is_err());
        let cfg = parse_config("kind = hyperbolic_plane\ns = 0.6\n").unwrap();
        assert_eq!(cfg.start, ChartPoint::new(0.0, 1.0));
        assert!(parse_config("kind = hyperbolic_plane\nv0 = -1\n").is_err());
    }
}
