use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Spectral analysis of second-moment matrices in deep classifiers.
#[derive(Debug, Parser)]
#[command(name = "spectrascope", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for data-parallel kernels (default: all cores).
    #[arg(long, global = true, env = "SPECTRASCOPE_THREADS")]
    pub threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    #[arg(long, global = true, value_enum, default_value_t = Format::All)]
    pub format: Format,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Svg,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the spectral density of an operator.
    Spectrum(SpectrumArgs),
    /// Knock out a component and compare spectra before and after.
    Attribute(AttributeArgs),
    /// Check the closed-form Fisher spectrum of the canonical model.
    CcmVerify(CcmVerifyArgs),
    /// Compare layer-wise G with its KFAC and CFAC approximations.
    KfacCompare(KfacCompareArgs),
    /// Train an MLP with SGD and log separation metrics.
    Train(TrainArgs),
    /// Split a second moment into class, cross-class and within parts.
    Decompose(DecomposeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Quantity {
    #[value(name = "G", alias = "g")]
    G,
    #[value(name = "KFAC", alias = "kfac")]
    Kfac,
    #[value(name = "CFAC", alias = "cfac")]
    Cfac,
    /// Feature second moment at `--layer` (0 is the input).
    #[value(name = "H", alias = "h")]
    H,
    /// Weighted error second moment at `--layer`.
    #[value(name = "Delta", alias = "delta")]
    Delta,
    /// `W W^T` for spectra, `W` itself for knockouts.
    #[value(name = "W", alias = "w")]
    W,
    #[value(name = "Hess", alias = "hess")]
    Hess,
    /// `Hess - G`.
    #[value(name = "E", alias = "e")]
    E,
}

/// Where the matrix or dataset comes from.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Dense matrix file (MTX1 binary or CSV).
    #[arg(long)]
    pub matrix: Option<PathBuf>,

    /// Generator spec, e.g. `spiked:n=300,spikes=5,4,3`, `pareto:p=500,n=1000,alpha=1`,
    /// `goe:n=200`, `ccm:d=10,c=3,alpha=0.3,s=4` (expected Fisher matrix) or
    /// `ccm:d=20,c=4,n=32,t=3` (dataset).
    #[arg(long)]
    pub synthetic: Option<String>,

    /// MLP checkpoint (MLP1).
    #[arg(long)]
    pub mlp: Option<PathBuf>,

    /// Class-blocked dataset (BLK2).
    #[arg(long)]
    pub data: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub quantity: Option<Quantity>,

    /// Layer for layer-wise quantities; omit for all layers where allowed.
    #[arg(long)]
    pub layer: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct LanczosArgs {
    /// Lanczos iterations (default 128, or 2048 with --log).
    #[arg(long = "M")]
    pub m: Option<usize>,
    /// Iterations for range estimation.
    #[arg(long = "M0", default_value_t = 32)]
    pub m0: usize,
    /// Grid points.
    #[arg(long = "K", default_value_t = 1024)]
    pub k: usize,
    /// Random probe vectors.
    #[arg(long, default_value_t = 1)]
    pub nvec: usize,
    #[arg(long, default_value_t = 3.0)]
    pub kappa: f64,
    /// Relative margin added around the estimated range.
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    /// Subspace iterations for deflation.
    #[arg(long = "T", default_value_t = 128)]
    pub t: usize,
    /// Rank of the leading eigenspace to deflate.
    #[arg(long, default_value_t = 0)]
    pub deflate: usize,
    /// Estimate the spectrum of log(|A| + epsilon).
    #[arg(long)]
    pub log: bool,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub lanczos: LanczosArgs,
    /// Also compute dense eigenvalues and compare (dimension <= 2000).
    #[arg(long)]
    pub validate: bool,
    /// Plot the density on a linear rather than logarithmic y axis.
    #[arg(long)]
    pub linear_y: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KnockoutArg {
    Project,
    Subtract,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Components to knock out (summed): class, cross, within, diag_cc, global_mean.
    #[arg(long, value_delimiter = ',', default_value = "class")]
    pub part: Vec<String>,
    /// Matrix to knock out instead of a named part (with --matrix).
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = KnockoutArg::Project)]
    pub knockout: KnockoutArg,
    /// Number of leading eigenvalues to pair (default min(dim, 750)).
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Number of points flagged as outliers (default: class count).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Plot log-eigenvalues.
    #[arg(long)]
    pub log: bool,
    /// Weight decay used for the W class component.
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
}

#[derive(Debug, Args)]
pub struct CcmVerifyArgs {
    #[arg(long = "D", default_value_t = 5)]
    pub d: usize,
    #[arg(long = "C", default_value_t = 3)]
    pub c: usize,
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    #[arg(long, default_value_t = 4.0)]
    pub s: f64,
    /// Sweep the 48-point (D, C, alpha, s) grid instead of a single point.
    #[arg(long)]
    pub grid: bool,
    /// Also average the empirical Fisher over this many draws per class.
    #[arg(long)]
    pub monte_carlo: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    /// Hidden layer widths for a freshly initialized network.
    #[arg(long, value_delimiter = ',', default_value = "32,32")]
    pub widths: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct KfacCompareArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub net: NetArgs,
    /// Leading eigenvalues compared (default C^2).
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Leading eigenvalues reported per component.
    #[arg(long, default_value_t = 16)]
    pub top: usize,
}
