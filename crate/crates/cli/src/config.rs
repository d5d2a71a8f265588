//! Run configuration: defaults, an optional flat TOML file, then flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use serde::Deserialize;

use selcopy_core::harness::report::Format;
use selcopy_core::harness::Fault;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Baseline,
    Selective,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultArg {
    None,
    VpiCorrupt,
}

impl From<FaultArg> for Fault {
    fn from(f: FaultArg) -> Fault {
        match f {
            FaultArg::None => Fault::None,
            FaultArg::VpiCorrupt => Fault::VpiCorrupt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Jsonl => Format::Jsonl,
        }
    }
}

/// Flags shared by every subcommand. Each one also exists as a key of the
/// config file, spelled with underscores.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Flat key/value TOML file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Comma-separated body sizes, e.g. `1K,64K,1M`.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Exchanges per connection.
    #[arg(long)]
    pub messages: Option<usize>,
    #[arg(long)]
    pub connections: Option<usize>,
    #[arg(long)]
    pub frag_capacity: Option<usize>,
    #[arg(long)]
    pub max_frags: Option<usize>,
    /// Receive-side parse window in bytes.
    #[arg(long)]
    pub lookahead: Option<usize>,
    /// Per-socket anchoring limit, e.g. `3M`.
    #[arg(long)]
    pub threshold: Option<String>,
    /// Deferred-teardown grace period in virtual seconds.
    #[arg(long)]
    pub grace: Option<f64>,
    /// Send response bodies with chunked encoding.
    #[arg(long)]
    #[serde(default)]
    pub chunked: bool,
    #[arg(long)]
    pub chunk_size: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// One thread per connection direction instead of the seeded scheduler.
    #[arg(long)]
    #[serde(default)]
    pub stress: bool,
    #[arg(long, value_enum)]
    pub fault: Option<FaultArg>,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: ModeArg,
    pub sizes: Vec<u64>,
    pub messages: usize,
    pub connections: usize,
    pub frag_capacity: usize,
    pub max_frags: usize,
    pub lookahead: usize,
    pub threshold: u64,
    pub grace: Duration,
    pub chunked: bool,
    pub chunk_size: u64,
    pub seed: u64,
    pub stress: bool,
    pub fault: Fault,
    pub out: Option<PathBuf>,
    pub format: Format,
}

/// Parses `4096`, `64K`, `1M`, `2MiB` and the like; suffixes are binary.
pub fn parse_size(s: &str) -> anyhow::Result<u64> {
    let t = s.trim();
    let upper = t.to_ascii_uppercase();
    let digits = upper.trim_end_matches(|c: char| c.is_ascii_alphabetic());
    let mult = match upper[digits.len()..].trim_end_matches("IB").trim_end_matches('B') {
        "" => 1,
        "K" => 1 << 10,
        "M" => 1 << 20,
        "G" => 1 << 30,
        other => bail!("unknown size suffix {other:?} in {s:?}"),
    };
    let n: u64 = digits.trim().parse().with_context(|| format!("bad size {s:?}"))?;
    n.checked_mul(mult).with_context(|| format!("size {s:?} overflows"))
}

pub fn parse_sizes(s: &str) -> anyhow::Result<Vec<u64>> {
    let sizes = s.split(',').filter(|p| !p.trim().is_empty()).map(parse_size).collect::<anyhow::Result<Vec<_>>>()?;
    if sizes.is_empty() {
        bail!("--sizes needs at least one size");
    }
    Ok(sizes)
}

fn load_file(path: &Path) -> anyhow::Result<Overrides> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl RunConfig {
    pub fn resolve(flags: &Overrides) -> anyhow::Result<RunConfig> {
        let file = match &flags.config {
            Some(p) => load_file(p)?,
            None => Overrides::default(),
        };
        macro_rules! pick {
            ($f:ident) => {
                flags.$f.clone().or(file.$f.clone())
            };
        }
        let grace = pick!(grace).unwrap_or(5.0);
        if !(grace.is_finite() && grace >= 0.0) {
            bail!("--grace must be a non-negative number of seconds");
        }
        let cfg = RunConfig {
            mode: pick!(mode).unwrap_or(ModeArg::Both),
            sizes: parse_sizes(&pick!(sizes).unwrap_or_else(|| "1K,64K,1M".into()))?,
            messages: pick!(messages).unwrap_or(4),
            connections: pick!(connections).unwrap_or(1),
            frag_capacity: pick!(frag_capacity).unwrap_or(1448),
            max_frags: pick!(max_frags).unwrap_or(17),
            lookahead: pick!(lookahead).unwrap_or(256),
            threshold: parse_size(&pick!(threshold).unwrap_or_else(|| "3M".into()))?,
            grace: Duration::from_secs_f64(grace),
            chunked: flags.chunked || file.chunked,
            chunk_size: parse_size(&pick!(chunk_size).unwrap_or_else(|| "16K".into()))?,
            seed: pick!(seed).unwrap_or(1),
            stress: flags.stress || file.stress,
            fault: pick!(fault).unwrap_or(FaultArg::None).into(),
            out: pick!(out),
            format: pick!(format).unwrap_or(FormatArg::Csv).into(),
        };
        if pick!(chunk_size).is_some() && !cfg.chunked {
            bail!("--chunk-size only applies together with --chunked");
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.connections == 0 {
            bail!("--connections must be at least 1");
        }
        if self.messages == 0 {
            bail!("--messages must be at least 1");
        }
        if self.frag_capacity == 0 || self.max_frags == 0 {
            bail!("--frag-capacity and --max-frags must be positive");
        }
        if self.lookahead < 16 {
            bail!("--lookahead below 16 bytes cannot hold a request line");
        }
        if self.chunk_size == 0 {
            bail!("--chunk-size must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse_with_binary_suffixes() {
        assert_eq!(parse_sizes("0,1K,64K,1M").unwrap(), vec![0, 1024, 65536, 1 << 20]);
        assert_eq!(parse_size("2MiB").unwrap(), 2 << 20);
        assert_eq!(parse_size("3mb").unwrap(), 3 << 20);
        assert!(parse_size("1Q").is_err());
        assert!(parse_size("K").is_err());
        assert!(parse_sizes(",").is_err());
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::resolve(&Overrides::default()).unwrap();
        assert_eq!((c.lookahead, c.threshold, c.grace, c.max_frags), (256, 3 << 20, Duration::from_secs(5), 17));
        assert_eq!(c.mode, ModeArg::Both);
    }

    #[test]
    fn flags_win_over_file() {
        let dir = std::env::temp_dir().join(format!("selcopy-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.toml");
        std::fs::write(&path, "sizes = \"2K\"\nseed = 9\nmax_frags = 45\nchunked = true\n").unwrap();
        let flags = Overrides { config: Some(path), seed: Some(3), ..Overrides::default() };
        let c = RunConfig::resolve(&flags).unwrap();
        assert_eq!((c.sizes.clone(), c.seed, c.max_frags, c.chunked), (vec![2048], 3, 45, true));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn bad_combinations_are_rejected() {
        let flags = Overrides { chunk_size: Some("4K".into()), ..Overrides::default() };
        assert!(RunConfig::resolve(&flags).is_err());
        let flags = Overrides { connections: Some(0), ..Overrides::default() };
        assert!(RunConfig::resolve(&flags).is_err());
    }
}
