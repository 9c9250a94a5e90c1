//! Flat `key = value` configuration merged under the command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use shiftrom::optimizer::Method;

/// Every setting as given by the user; `None` means "not given".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub example: Option<u8>,
    pub scale: Option<f64>,
    pub method: Option<Vec<Method>>,
    pub modes: Option<Vec<usize>>,
    pub eps: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub dump_snapshots: Option<bool>,
    pub iters: Option<usize>,
    pub mu: Option<f64>,
}

pub const KEYS: [&str; 11] = [
    "example",
    "scale",
    "method",
    "modes",
    "eps",
    "out",
    "seed",
    "threads",
    "dump-snapshots",
    "iters",
    "mu",
];

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse().map_err(|e| format!("{key}: cannot parse {v:?}: {e}"))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    let items: Result<Vec<T>, String> = v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect();
    let items = items?;
    if items.is_empty() {
        return Err(format!("{key}: empty list"));
    }
    Ok(items)
}

impl Overrides {
    /// Parses the file format: one `key = value` per line, `#` comments,
    /// list values comma separated. Unknown keys are errors.
    pub fn parse_config(text: &str) -> Result<Self, String> {
        let mut seen = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", no + 1))?;
            let k = k.trim().replace('_', "-");
            if !KEYS.contains(&k.as_str()) {
                return Err(format!("line {}: unknown key {k:?}", no + 1));
            }
            if seen.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(format!("line {}: duplicate key {k:?}", no + 1));
            }
        }
        let mut o = Overrides::default();
        for (k, v) in &seen {
            match k.as_str() {
                "example" => o.example = Some(parse(k, v)?),
                "scale" => o.scale = Some(parse(k, v)?),
                "method" => o.method = Some(parse_list(k, v)?),
                "modes" => o.modes = Some(parse_list(k, v)?),
                "eps" => o.eps = Some(parse_list(k, v)?),
                "out" => o.out = Some(PathBuf::from(v)),
                "seed" => o.seed = Some(parse(k, v)?),
                "threads" => o.threads = Some(parse(k, v)?),
                "dump-snapshots" => o.dump_snapshots = Some(parse(k, v)?),
                "iters" => o.iters = Some(parse(k, v)?),
                "mu" => o.mu = Some(parse(k, v)?),
                _ => unreachable!(),
            }
        }
        Ok(o)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Values from `self` win over `base`.
    pub fn over(self, base: Overrides) -> Overrides {
        Overrides {
            example: self.example.or(base.example),
            scale: self.scale.or(base.scale),
            method: self.method.or(base.method),
            modes: self.modes.or(base.modes),
            eps: self.eps.or(base.eps),
            out: self.out.or(base.out),
            seed: self.seed.or(base.seed),
            threads: self.threads.or(base.threads),
            dump_snapshots: self.dump_snapshots.or(base.dump_snapshots),
            iters: self.iters.or(base.iters),
            mu: self.mu.or(base.mu),
        }
    }
}

/// Fully resolved settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub example: u8,
    pub scale: f64,
    pub methods: Vec<Method>,
    pub modes: Vec<usize>,
    /// Tolerances; `None` when neither flag nor file gave any.
    pub eps: Option<Vec<f64>>,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub dump_snapshots: bool,
    pub iters: usize,
    pub mu: f64,
}

impl Settings {
    pub fn resolve(o: Overrides) -> Result<Self, String> {
        let defaults = shiftrom::optimizer::OptimizerConfig::default();
        let s = Settings {
            example: o.example.unwrap_or(1),
            scale: o.scale.unwrap_or(0.25),
            methods: o.method.unwrap_or_else(|| vec![Method::Fom, Method::Pod, Method::Spod]),
            modes: o.modes.unwrap_or_else(|| vec![5, 10, 20, 40]),
            eps: o.eps,
            out: o.out.unwrap_or_else(|| PathBuf::from("results")),
            seed: o.seed.unwrap_or(0),
            threads: o.threads,
            dump_snapshots: o.dump_snapshots.unwrap_or(false),
            iters: o.iters.unwrap_or(defaults.n_iter),
            mu: o.mu.unwrap_or(defaults.mu),
        };
        if s.modes.contains(&0) {
            return Err("modes must be positive".into());
        }
        if s.threads == Some(0) {
            return Err("threads must be positive".into());
        }
        if let Some(eps) = &s.eps {
            if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err("eps values must be positive".into());
            }
        }
        Ok(s)
    }

    /// The settings in the configuration file format.
    pub fn to_config(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let mut lines = vec![
            format!("example = {}", self.example),
            format!("scale = {}", self.scale),
            format!("method = {}", join(self.methods.iter().map(|m| m.name().to_string()).collect())),
            format!("modes = {}", join(self.modes.iter().map(|m| m.to_string()).collect())),
        ];
        if let Some(eps) = &self.eps {
            lines.push(format!("eps = {}", join(eps.iter().map(|e| format!("{e:e}")).collect())));
        }
        lines.push(format!("out = {}", self.out.display()));
        lines.push(format!("seed = {}", self.seed));
        if let Some(t) = self.threads {
            lines.push(format!("threads = {t}"));
        }
        lines.push(format!("dump-snapshots = {}", self.dump_snapshots));
        lines.push(format!("iters = {}", self.iters));
        lines.push(format!("mu = {:e}", self.mu));
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key() {
        let text = "# desk run\nexample = 2\nscale=0.5\nmethod = pod, spod\nmodes = 4,8\neps = 1e-2\nout = /tmp/x\n\
                    seed = 7\nthreads = 2\ndump_snapshots = true\niters = 30\nmu = 1e-3 # trailing\n";
        let o = Overrides::parse_config(text).unwrap();
        assert_eq!(o.example, Some(2));
        assert_eq!(o.method, Some(vec![Method::Pod, Method::Spod]));
        assert_eq!(o.modes, Some(vec![4, 8]));
        assert_eq!(o.dump_snapshots, Some(true));
        assert_eq!(o.mu, Some(1e-3));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(Overrides::parse_config("exmaple = 1").unwrap_err().contains("unknown key"));
        assert!(Overrides::parse_config("example 1").is_err());
        assert!(Overrides::parse_config("example = one").is_err());
        assert!(Overrides::parse_config("seed = 1\nseed = 2").unwrap_err().contains("duplicate"));
        assert!(Overrides::parse_config("method = fom,newton").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let file = Overrides::parse_config("example = 2\nscale = 0.5").unwrap();
        let flags = Overrides {
            example: Some(3),
            ..Default::default()
        };
        let s = Settings::resolve(flags.over(file)).unwrap();
        assert_eq!((s.example, s.scale), (3, 0.5));
    }

    #[test]
    fn config_round_trip() {
        let s = Settings::resolve(Overrides {
            eps: Some(vec![1e-3]),
            threads: Some(3),
            ..Default::default()
        })
        .unwrap();
        let back = Settings::resolve(Overrides::parse_config(&s.to_config()).unwrap()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |o: Overrides| Settings::resolve(o).is_err();
        assert!(bad(Overrides { modes: Some(vec![0]), ..Default::default() }));
        assert!(bad(Overrides { threads: Some(0), ..Default::default() }));
        assert!(bad(Overrides { eps: Some(vec![-1.0]), ..Default::default() }));
    }
}
