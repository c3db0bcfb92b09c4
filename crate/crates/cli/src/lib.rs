//! Configuration and dispatch for the `collapse-lab` binary.
//!
//! Every subcommand takes its keys from three layers: built-in defaults, an
//! optional flat TOML file (`--config`), and command-line flags, later layers
//! winning. File keys are `snake_case`; the matching flags are `--kebab-case`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use thiserror::Error;

use collapse_lab::ks::{bundled, RaySet};
use collapse_lab::report::ExperimentReport;
use collapse_lab::scenarios::{
    self, EprConfig, ErrorClass, LocalizationConfig, OracleConfig, ScenarioError, SingletConfig,
    TwoPeakSetup,
};
use collapse_lab::spin::OrthoTriple;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Scenario(#[from] ScenarioError),
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Output { .. } => EXIT_CONFIG,
            Self::Scenario(e) => match e.class() {
                ErrorClass::Config => EXIT_CONFIG,
                ErrorClass::Numerical => EXIT_NUMERICAL,
                ErrorClass::Invariant => EXIT_INVARIANT,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Real,
    Flag,
    Reals(usize),
    Text,
}

/// One configuration key. `default: None` means the key has no default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Key {
    pub name: &'static str,
    kind: Kind,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: Option<&'static str>, help: &'static str) -> Key {
    Key { name, kind, default, help }
}

const SEED: Key = key("seed", Kind::Int, None, "master RNG seed (required)");
const OUTPUT: Key = key("output", Kind::Text, None, "JSON report path; stdout when absent");
const CSV: Key = key("csv", Kind::Text, None, "per-trial CSV table path");
const WORKERS: Key = key("workers", Kind::Int, Some("0"), "worker threads; 0 uses every core");
const RAYS: Key = key(
    "rays",
    Kind::Text,
    Some("bundled:ks33"),
    "ray-set file, or bundled:NAME for a shipped set (ks33, axes, two_triples, peres_fragment)",
);

fn two_peak_keys(lambda: &'static str, horizon: &'static str, dt: &'static str, weight: &'static str) -> Vec<Key> {
    vec![
        key("points", Kind::Int, Some("64"), "grid points on the ring"),
        key("spacing", Kind::Real, Some("1"), "grid spacing"),
        key("lambda", Kind::Real, Some(lambda), "jump rate per particle"),
        key("alpha", Kind::Real, Some("0"), "inverse squared localization width; 0 selects 1/(16 spacing^2)"),
        key("mass", Kind::Real, Some("20"), "particle mass; 0 drops the kinetic term"),
        key("peaks", Kind::Reals(2), Some("20,44"), "packet centers"),
        key("width", Kind::Real, Some("2"), "packet position spread"),
        key("first_weight", Kind::Real, Some(weight), "probability weight of the first packet"),
        key("horizon", Kind::Real, Some(horizon), "evolution time"),
        key("dt", Kind::Real, Some(dt), "time step"),
    ]
}

/// The subcommands and their keys, in help order.
pub fn subcommands() -> Vec<(&'static str, &'static str, Vec<Key>)> {
    let with_common = |mut keys: Vec<Key>, stochastic: bool, table: bool| {
        if stochastic {
            keys.insert(0, SEED);
        }
        keys.push(OUTPUT);
        if table {
            keys.push(CSV);
        }
        keys.push(WORKERS);
        keys
    };
    let mut oracle = vec![key("k", Kind::Int, Some("10000"), "ensemble size (at least 100)")];
    oracle.extend(two_peak_keys("1", "5", "0.025", "0.5"));
    let mut grw = vec![key("trials", Kind::Int, Some("1000"), "independent trajectories")];
    grw.extend(two_peak_keys("1", "20", "0.05", "0.3"));
    vec![
        (
            "singlet",
            "Squared-spin triple measurements on the spin-0 pair, b measured first",
            with_common(
                vec![
                    key("trials", Kind::Int, Some("10000"), "number of trials"),
                    key("same_triples", Kind::Flag, Some("false"), "give a the same triple as b"),
                    key("a_roll", Kind::Real, Some("0.3"), "a's triple: roll about x (rad)"),
                    key("a_pitch", Kind::Real, Some("0.7"), "a's triple: pitch about y (rad)"),
                    key("a_yaw", Kind::Real, Some("1.1"), "a's triple: yaw about z (rad)"),
                    key("b_roll", Kind::Real, Some("0"), "b's triple: roll about x (rad)"),
                    key("b_pitch", Kind::Real, Some("0"), "b's triple: pitch about y (rad)"),
                    key("b_yaw", Kind::Real, Some("0"), "b's triple: yaw about z (rad)"),
                ],
                true,
                true,
            ),
        ),
        (
            "epr",
            "Pointer measurement of one particle of a position-entangled pair",
            with_common(
                vec![
                    key("trials", Kind::Int, Some("1000"), "number of trials"),
                    key("regions", Kind::Reals(4), Some("-50,20,-20,50"), "region centers D1,D2,D3,D4"),
                    key("packet_width", Kind::Real, Some("1"), "particle packet width"),
                    key("pointer_points", Kind::Int, Some("64"), "pointer ring size"),
                    key("pointer_width", Kind::Real, Some("2"), "pointer packet width"),
                    key("pointer_shift", Kind::Int, Some("12"), "pointer displacement in sites"),
                    key("coupling", Kind::Real, Some("1"), "pointer coupling g; 0 switches the measurement off"),
                    key("amplification", Kind::Real, Some("100"), "pointer rate multiplier N"),
                    key("lambda", Kind::Real, Some("0.05"), "jump rate per particle"),
                    key("alpha", Kind::Real, Some("0"), "inverse squared localization width; 0 selects 1/16"),
                    key("t_measure", Kind::Real, Some("4"), "collapse time after the coupling"),
                ],
                true,
                true,
            ),
        ),
        ("grw-run", "Localization of a two-packet state by GRW jumps", with_common(grw, true, true)),
        (
            "oracle-compare",
            "Trajectory ensemble against the master-equation solution",
            with_common(oracle, true, false),
        ),
        ("ks-check", "101-colorability of a ray set", with_common(vec![RAYS], false, false)),
        ("ck-trace", "The locality argument on an uncolorable ray set", with_common(vec![RAYS], false, false)),
    ]
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

pub fn command() -> Command {
    let mut cmd = Command::new("collapse-lab")
        .about("GRW collapse trajectories, a Lindblad oracle and spin-1 locality experiments")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about, keys) in subcommands() {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("flat TOML file of snake_case keys; flags override it"),
        );
        for k in keys {
            let help = match k.default {
                Some(d) => format!("{} [default: {d}]", k.help),
                None => k.help.to_string(),
            };
            let arg = Arg::new(k.name).long(flag_name(k.name)).help(help);
            sub = sub.arg(match k.kind {
                Kind::Flag => arg.action(ArgAction::SetTrue),
                _ => arg.value_name(k.name.to_uppercase()).allow_hyphen_values(true),
            });
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn toml_scalar(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        toml::Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

fn suggestion(unknown: &str, keys: &[Key]) -> String {
    keys.iter()
        .map(|k| (strsim::levenshtein(unknown, k.name), k.name))
        .filter(|(d, _)| *d <= 2)
        .min()
        .map(|(_, k)| format!(" (did you mean `{k}`?)"))
        .unwrap_or_default()
}

/// Reads a flat TOML table into raw strings, rejecting unknown keys.
pub fn read_config_file(path: &Path, keys: &[Key]) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("malformed {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (name, value) in table {
        let Some(k) = keys.iter().find(|k| k.name == name) else {
            return Err(CliError::Config(format!("unknown key `{name}`{}", suggestion(&name, keys))));
        };
        let raw = match value {
            toml::Value::Array(items) if matches!(k.kind, Kind::Reals(_)) => items
                .iter()
                .map(toml_scalar)
                .collect::<Option<Vec<_>>>()
                .map(|v| v.join(",")),
            v => toml_scalar(&v),
        }
        .ok_or_else(|| CliError::Config(format!("`{name}` has an unsupported value type")))?;
        out.insert(name, raw);
    }
    Ok(out)
}

/// Validated key values for one subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Values {
    keys: Vec<Key>,
    raw: BTreeMap<String, String>,
}

fn bad(name: &str, raw: &str, what: &str) -> CliError {
    CliError::Config(format!("`{name}` = `{raw}` is not {what}"))
}

impl Values {
    fn lookup(&self, name: &str) -> &Key {
        self.keys.iter().find(|k| k.name == name).expect("known key")
    }

    pub fn raw(&self, name: &str) -> Option<&str> {
        self.raw.get(name).map(String::as_str)
    }

    fn required(&self, name: &str) -> Result<&str> {
        self.raw(name)
            .ok_or_else(|| CliError::Config(format!("missing required key `{name}`")))
    }

    pub fn int(&self, name: &str) -> Result<u64> {
        let raw = self.required(name)?;
        raw.parse().map_err(|_| bad(name, raw, "a non-negative integer"))
    }

    pub fn real(&self, name: &str) -> Result<f64> {
        let raw = self.required(name)?;
        raw.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| bad(name, raw, "a finite number"))
    }

    pub fn flag(&self, name: &str) -> Result<bool> {
        let raw = self.required(name)?;
        raw.parse().map_err(|_| bad(name, raw, "true or false"))
    }

    pub fn reals<const N: usize>(&self, name: &str) -> Result<[f64; N]> {
        let raw = self.required(name)?;
        let v: Vec<f64> = raw
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(name, raw, "a comma-separated list of numbers"))?;
        v.try_into().map_err(|_| bad(name, raw, &format!("a list of {N} numbers")))
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.raw(name)
    }

    /// Checks that every value has the right shape for its kind.
    fn check_kinds(&self) -> Result<()> {
        for name in self.raw.keys() {
            match self.lookup(name).kind {
                Kind::Int => self.int(name).map(drop)?,
                Kind::Real => self.real(name).map(drop)?,
                Kind::Flag => self.flag(name).map(drop)?,
                Kind::Reals(2) => self.reals::<2>(name).map(drop)?,
                Kind::Reals(4) => self.reals::<4>(name).map(drop)?,
                Kind::Reals(_) | Kind::Text => {}
            }
        }
        Ok(())
    }
}

/// Where a ray set comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum RaySource {
    Bundled(&'static str, &'static str),
    File(PathBuf),
}

impl RaySource {
    fn parse(raw: &str) -> Result<Self> {
        match raw.strip_prefix("bundled:") {
            Some(name) => bundled::ALL
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(n, text)| Self::Bundled(n, text))
                .ok_or_else(|| CliError::Config(format!("`rays`: no bundled set named `{name}`"))),
            None => Ok(Self::File(PathBuf::from(raw))),
        }
    }

    fn load(&self) -> Result<RaySet> {
        let set = match self {
            Self::Bundled(_, text) => RaySet::parse(text),
            Self::File(path) => RaySet::load(path),
        };
        set.map_err(|e| CliError::Config(format!("`rays`: {e}")))
    }
}

/// A fully resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Singlet(SingletConfig),
    Epr(EprConfig),
    GrwRun(LocalizationConfig),
    OracleCompare(OracleConfig),
    KsCheck(RaySource, String),
    CkTrace(RaySource, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub subcommand: String,
    pub scenario: Scenario,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub workers: usize,
}

fn two_peak_setup(v: &Values) -> Result<TwoPeakSetup> {
    Ok(TwoPeakSetup {
        points: v.int("points")? as usize,
        spacing: v.real("spacing")?,
        lambda: v.real("lambda")?,
        alpha: v.real("alpha")?,
        mass: v.real("mass")?,
        peaks: v.reals("peaks")?,
        width: v.real("width")?,
        first_weight: v.real("first_weight")?,
        horizon: v.real("horizon")?,
        dt: v.real("dt")?,
    })
}

fn ensure(ok: bool, name: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("`{name}` {message}")))
    }
}

/// Common range checks, reported against the offending key before any
/// scenario work starts.
fn check_ranges(v: &Values) -> Result<()> {
    for name in ["lambda", "alpha", "mass", "coupling"] {
        if v.raw(name).is_some() {
            ensure(v.real(name)? >= 0.0, name, "must be >= 0")?;
        }
    }
    for name in ["spacing", "width", "horizon", "dt", "packet_width", "pointer_width", "t_measure"] {
        if v.raw(name).is_some() {
            ensure(v.real(name)? > 0.0, name, "must be > 0")?;
        }
    }
    if v.raw("first_weight").is_some() {
        ensure((0.0..=1.0).contains(&v.real("first_weight")?), "first_weight", "must lie in [0, 1]")?;
    }
    for name in ["trials", "k"] {
        if v.raw(name).is_some() {
            ensure(v.int(name)? > 0, name, "must be positive")?;
        }
    }
    Ok(())
}

/// Merges defaults, the optional config file and explicit flags, then
/// validates the result.
pub fn parse_config(
    subcommand: &str,
    file: Option<&Path>,
    flags: &BTreeMap<String, String>,
) -> Result<RunConfig> {
    let (_, _, keys) = subcommands()
        .into_iter()
        .find(|(n, _, _)| *n == subcommand)
        .ok_or_else(|| CliError::Config(format!("unknown scenario `{subcommand}`")))?;
    let mut raw: BTreeMap<String, String> = keys
        .iter()
        .filter_map(|k| k.default.map(|d| (k.name.to_string(), d.to_string())))
        .collect();
    if let Some(path) = file {
        raw.extend(read_config_file(path, &keys)?);
    }
    for (name, value) in flags {
        if !keys.iter().any(|k| k.name == name) {
            return Err(CliError::Config(format!("unknown key `{name}`{}", suggestion(name, &keys))));
        }
        raw.insert(name.clone(), value.clone());
    }
    let v = Values { keys, raw };
    v.check_kinds()?;
    check_ranges(&v)?;

    let stochastic = v.keys.iter().any(|k| k.name == "seed");
    let seed = if stochastic { Some(v.int("seed")?) } else { None };
    let scenario = match subcommand {
        "singlet" => {
            let b = OrthoTriple::from_euler(v.real("b_roll")?, v.real("b_pitch")?, v.real("b_yaw")?);
            let a = if v.flag("same_triples")? {
                b
            } else {
                OrthoTriple::from_euler(v.real("a_roll")?, v.real("a_pitch")?, v.real("a_yaw")?)
            };
            Scenario::Singlet(SingletConfig {
                triple_a: a,
                triple_b: b,
                trials: v.int("trials")?,
                seed: seed.expect("stochastic"),
            })
        }
        "epr" => Scenario::Epr(EprConfig {
            regions: v.reals("regions")?,
            packet_width: v.real("packet_width")?,
            pointer_points: v.int("pointer_points")? as usize,
            pointer_width: v.real("pointer_width")?,
            pointer_shift: v.int("pointer_shift")? as usize,
            coupling: v.real("coupling")?,
            amplification: v.real("amplification")?,
            lambda: v.real("lambda")?,
            alpha: v.real("alpha")?,
            t_measure: v.real("t_measure")?,
            trials: v.int("trials")?,
            seed: seed.expect("stochastic"),
        }),
        "grw-run" => Scenario::GrwRun(LocalizationConfig {
            setup: two_peak_setup(&v)?,
            trials: v.int("trials")?,
            seed: seed.expect("stochastic"),
        }),
        "oracle-compare" => Scenario::OracleCompare(OracleConfig {
            setup: two_peak_setup(&v)?,
            ensemble: v.int("k")?,
            seed: seed.expect("stochastic"),
        }),
        "ks-check" | "ck-trace" => {
            let raw = v.text("rays").expect("has default").to_string();
            let source = RaySource::parse(&raw)?;
            if subcommand == "ks-check" {
                Scenario::KsCheck(source, raw)
            } else {
                Scenario::CkTrace(source, raw)
            }
        }
        _ => unreachable!("subcommand list is closed"),
    };
    Ok(RunConfig {
        subcommand: subcommand.to_string(),
        scenario,
        seed,
        output: v.text("output").map(PathBuf::from),
        csv: v.text("csv").map(PathBuf::from),
        workers: v.int("workers")? as usize,
    })
}

/// Builds a [`RunConfig`] from parsed command-line arguments.
pub fn config_from_matches(matches: &ArgMatches) -> Result<RunConfig> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let (_, _, keys) = subcommands().into_iter().find(|(n, _, _)| *n == name).expect("known");
    let mut flags = BTreeMap::new();
    for k in &keys {
        match k.kind {
            Kind::Flag => {
                if sub.get_flag(k.name) {
                    flags.insert(k.name.to_string(), "true".to_string());
                }
            }
            _ => {
                if let Some(v) = sub.get_one::<String>(k.name) {
                    flags.insert(k.name.to_string(), v.clone());
                }
            }
        }
    }
    let file = sub.get_one::<String>("config").map(PathBuf::from);
    parse_config(name, file.as_deref(), &flags)
}

/// Runs the scenario and returns its report.
pub fn execute(config: &RunConfig) -> Result<ExperimentReport> {
    let report = match &config.scenario {
        Scenario::Singlet(c) => scenarios::run_singlet_spacetime(c)?,
        Scenario::Epr(c) => scenarios::run_epr_position(c)?,
        Scenario::GrwRun(c) => scenarios::run_localization(c)?,
        Scenario::OracleCompare(c) => scenarios::run_oracle_comparison(c)?,
        Scenario::KsCheck(src, raw) => scenarios::run_ks_check(&src.load()?, raw)?,
        Scenario::CkTrace(src, raw) => scenarios::run_ck_trace(&src.load()?, raw)?,
    };
    Ok(report)
}

/// Writes `contents` next to `path` and renames it into place; the partial
/// file is removed on failure.
fn write_atomically(path: &Path, write: impl FnOnce(&mut fs::File) -> std::io::Result<()>) -> Result<()> {
    let err = |e: std::io::Error| CliError::Output {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    let result = fs::File::create(&partial)
        .and_then(|mut f| write(&mut f).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&partial, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&partial);
        return Err(err(e));
    }
    Ok(())
}

/// Executes `config` and writes its outputs.
pub fn run(config: &RunConfig) -> Result<ExperimentReport> {
    if config.workers > 0 {
        // Fails only if the global pool already exists; results do not
        // depend on the thread count, so that is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build_global();
    }
    let start = std::time::Instant::now();
    let mut report = execute(config)?;
    report.wall_time_s = Some(start.elapsed().as_secs_f64());
    let json = report.to_json();
    match &config.output {
        Some(path) => write_atomically(path, |f| f.write_all(json.as_bytes()))?,
        None => print!("{json}"),
    }
    if let Some(path) = &config.csv {
        let table = report.table.as_ref().ok_or_else(|| {
            CliError::Scenario(ScenarioError::Invariant(format!(
                "{} returned no trial table",
                config.subcommand
            )))
        })?;
        write_atomically(path, |f| table.write_csv(f).map_err(std::io::Error::other))?;
    }
    Ok(report)
}

/// Parses `args`, runs, and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = config_from_matches(&matches).and_then(|c| run(&c));
    match outcome {
        Ok(report) => {
            let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).collect();
            eprintln!(
                "{}: {} of {} checks passed ({:.2} s)",
                report.scenario,
                report.checks.len() - failed.len(),
                report.checks.len(),
                report.wall_time_s.unwrap_or(0.0)
            );
            for c in failed {
                eprintln!("  failed: {} = {} (want {} {})", c.name, c.value, c.relation, c.bound);
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn config_err(r: Result<RunConfig>) -> String {
        match r {
            Err(e @ CliError::Config(_)) => e.to_string(),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_singlet_config_uses_defaults() {
        let c = parse_config("singlet", None, &flags(&[("seed", "5")])).unwrap();
        let Scenario::Singlet(s) = c.scenario else { panic!() };
        assert_eq!(s.trials, 10_000);
        assert_eq!(s.seed, 5);
        assert_eq!(s.triple_b, OrthoTriple::standard());
        assert_ne!(s.triple_a, s.triple_b);
        assert_eq!(c.workers, 0);
        assert_eq!(c.output, None);
    }

    #[test]
    fn seed_is_required_for_stochastic_runs() {
        let msg = config_err(parse_config("epr", None, &BTreeMap::new()));
        assert!(msg.contains("`seed`"), "{msg}");
        assert!(parse_config("ks-check", None, &BTreeMap::new()).is_ok());
    }

    #[test]
    fn negative_lambda_names_the_key() {
        let msg = config_err(parse_config("grw-run", None, &flags(&[("seed", "1"), ("lambda", "-0.5")])));
        assert!(msg.contains("`lambda`"), "{msg}");
    }

    #[test]
    fn malformed_values_name_the_key() {
        let msg = config_err(parse_config("epr", None, &flags(&[("seed", "1"), ("regions", "1,2,3")])));
        assert!(msg.contains("`regions`"), "{msg}");
        let msg = config_err(parse_config("singlet", None, &flags(&[("seed", "x")])));
        assert!(msg.contains("`seed`"), "{msg}");
    }

    #[test]
    fn unknown_file_key_gets_a_suggestion() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 1\nlamda = 0.5\n").unwrap();
        let msg = config_err(parse_config("grw-run", Some(&path), &BTreeMap::new()));
        assert!(msg.contains("unknown key `lamda`") && msg.contains("did you mean `lambda`"), "{msg}");
        fs::write(&path, "seed = 1\nzzzzzz = 0.5\n").unwrap();
        let msg = config_err(parse_config("grw-run", Some(&path), &BTreeMap::new()));
        assert!(!msg.contains("did you mean"), "{msg}");
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 1\ntrials = 50\npeaks = [18, 46.5]\n").unwrap();
        let c = parse_config("grw-run", Some(&path), &flags(&[("trials", "70")])).unwrap();
        let Scenario::GrwRun(l) = c.scenario else { panic!() };
        assert_eq!(l.trials, 70);
        assert_eq!(l.seed, 1);
        assert_eq!(l.setup.peaks, [18.0, 46.5]);
    }

    #[test]
    fn malformed_file_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = = 1\n").unwrap();
        assert!(config_err(parse_config("singlet", Some(&path), &BTreeMap::new())).contains("malformed"));
        let missing = dir.path().join("absent.toml");
        assert!(config_err(parse_config("singlet", Some(&missing), &BTreeMap::new())).contains("cannot read"));
    }

    #[test]
    fn unknown_scenario_rejected() {
        assert!(config_err(parse_config("bell", None, &BTreeMap::new())).contains("unknown scenario"));
    }

    #[test]
    fn bundled_ray_sources() {
        assert!(matches!(RaySource::parse("bundled:axes").unwrap(), RaySource::Bundled("axes", _)));
        assert!(RaySource::parse("bundled:nope").is_err());
        assert_eq!(RaySource::parse("x.rays").unwrap(), RaySource::File("x.rays".into()));
    }

    #[test]
    fn help_lists_every_key_and_default() {
        for (name, _, keys) in subcommands() {
            let mut cmd = command();
            let help = cmd.find_subcommand_mut(name).unwrap().render_long_help().to_string();
            for k in keys {
                assert!(help.contains(&format!("--{}", flag_name(k.name))), "{name}: {}", k.name);
                if let Some(d) = k.default {
                    assert!(help.contains(&format!("[default: {d}]")), "{name}: {}", k.name);
                }
            }
        }
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        use collapse_lab::grw::GrwError;
        assert_eq!(CliError::Config("x".into()).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::from(ScenarioError::from(GrwError::GridInadequate { sum: 0.5 })).exit_code(), EXIT_NUMERICAL);
        assert_eq!(CliError::from(ScenarioError::Invariant("x".into())).exit_code(), EXIT_INVARIANT);
    }
}
