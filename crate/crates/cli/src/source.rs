//! Resolves `--matrix`, `--synthetic`, `--mlp` and `--data` into a matrix,
//! a dataset, or a network together with its dataset.

use std::collections::BTreeMap;

use spectrascope::blocks::ClassArray;
use spectrascope::ccm::{self, CcmConfig};
use spectrascope::dense;
use spectrascope::mlp::{self, Analysis, Mlp, Scope};
use spectrascope::{synthetic, Matrix};

use crate::args::{Quantity, SourceArgs};
use crate::error::{config, CliError};

/// A parsed `kind:key=value,...` generator spec. A comma-separated token
/// without `=` extends the list of the preceding key.
#[derive(Debug, Clone, PartialEq)]
pub struct Spec {
    pub kind: String,
    params: BTreeMap<String, Vec<String>>,
}

impl Spec {
    pub fn parse(text: &str) -> Result<Spec, CliError> {
        let (kind, rest) = match text.split_once(':') {
            Some((k, r)) => (k.trim(), r),
            None => (text.trim(), ""),
        };
        if kind.is_empty() {
            return config(format!("empty generator kind in {text:?}"));
        }
        let mut params: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut last: Option<String> = None;
        for tok in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok.split_once('=') {
                Some((k, v)) => {
                    let k = k.trim().to_string();
                    if params.contains_key(&k) {
                        return config(format!("duplicate key {k:?} in {text:?}"));
                    }
                    params.insert(k.clone(), vec![v.trim().to_string()]);
                    last = Some(k);
                }
                None => match &last {
                    Some(k) => params.get_mut(k).expect("key inserted").push(tok.to_string()),
                    None => return config(format!("value {tok:?} has no key in {text:?}")),
                },
            }
        }
        Ok(Spec {
            kind: kind.to_string(),
            params,
        })
    }

    pub fn has(&self, key: &str) -> bool {
        self.params.contains_key(key)
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<(), CliError> {
        match self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => config(format!(
                "unknown key {k:?} for {}; expected one of {allowed:?}",
                self.kind
            )),
            None => Ok(()),
        }
    }

    fn scalar(&self, key: &str) -> Result<Option<&str>, CliError> {
        match self.params.get(key).map(Vec::as_slice) {
            None => Ok(None),
            Some([v]) => Ok(Some(v)),
            Some(_) => config(format!("{}: key {key:?} takes a single value", self.kind)),
        }
    }

    pub fn usize(&self, key: &str, default: Option<usize>) -> Result<usize, CliError> {
        match (self.scalar(key)?, default) {
            (Some(v), _) => v
                .parse()
                .or_else(|_| config(format!("{}: {key} = {v:?} is not a count", self.kind))),
            (None, Some(d)) => Ok(d),
            (None, None) => config(format!("{}: missing key {key:?}", self.kind)),
        }
    }

    pub fn f64(&self, key: &str, default: Option<f64>) -> Result<f64, CliError> {
        match (self.scalar(key)?, default) {
            (Some(v), _) => v
                .parse()
                .or_else(|_| config(format!("{}: {key} = {v:?} is not a number", self.kind))),
            (None, Some(d)) => Ok(d),
            (None, None) => config(format!("{}: missing key {key:?}", self.kind)),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.params
            .get(key)
            .map(|vs| {
                vs.iter()
                    .map(|v| {
                        v.parse()
                            .or_else(|_| config(format!("{}: {key} entry {v:?} is not a number", self.kind)))
                    })
                    .collect()
            })
            .unwrap_or_else(|| Ok(Vec::new()))
    }
}

pub enum Source {
    Matrix(Matrix),
    Data(ClassArray),
    Model { net: Mlp, data: ClassArray },
}

/// True when a `ccm` spec describes a dataset rather than an expected
/// Fisher matrix.
fn is_ccm_dataset(spec: &Spec) -> bool {
    spec.has("n") || spec.has("t")
}

fn synthetic_matrix(spec: &Spec, seed: u64) -> Result<Matrix, CliError> {
    Ok(match spec.kind.as_str() {
        "spiked" => {
            spec.check_keys(&["n", "spikes"])?;
            synthetic::spiked_wishart(spec.usize("n", None)?, &spec.f64_list("spikes")?, seed)?
        }
        "pareto" => {
            spec.check_keys(&["p", "n", "alpha"])?;
            let p = spec.usize("p", None)?;
            synthetic::pareto_wishart(p, spec.usize("n", Some(2 * p))?, spec.f64("alpha", Some(1.0))?, seed)?
        }
        "goe" => {
            spec.check_keys(&["n"])?;
            synthetic::goe(spec.usize("n", None)?, seed)
        }
        "ccm" => {
            spec.check_keys(&["d", "c", "alpha", "s"])?;
            ccm::expected_fim(
                spec.usize("d", None)?,
                spec.usize("c", None)?,
                spec.f64("alpha", None)?,
                spec.f64("s", None)?,
            )?
        }
        other => return config(format!("unknown generator {other:?}; expected spiked, pareto, goe or ccm")),
    })
}

fn synthetic_dataset(spec: &Spec, seed: u64) -> Result<ClassArray, CliError> {
    if spec.kind != "ccm" {
        return config(format!("generator {:?} does not produce a dataset", spec.kind));
    }
    spec.check_keys(&["d", "c", "n", "t"])?;
    let cfg = CcmConfig {
        d: spec.usize("d", None)?,
        c: spec.usize("c", None)?,
        n: spec.usize("n", None)?,
        t: spec.f64("t", Some(1.0))?,
        seed,
    };
    Ok(ccm::sample_ccm(&cfg)?)
}

/// Loads the dataset named by `--data` or a `ccm` dataset spec.
pub fn dataset(args: &SourceArgs, seed: u64) -> Result<Option<ClassArray>, CliError> {
    match (&args.data, &args.synthetic) {
        (Some(_), Some(_)) => config("--data and --synthetic are mutually exclusive"),
        (Some(p), None) => Ok(Some(ClassArray::load(p)?)),
        (None, Some(s)) => {
            let spec = Spec::parse(s)?;
            if spec.kind == "ccm" && is_ccm_dataset(&spec) {
                Ok(Some(synthetic_dataset(&spec, seed)?))
            } else {
                Ok(None)
            }
        }
        (None, None) => Ok(None),
    }
}

pub fn load(args: &SourceArgs, seed: u64) -> Result<Source, CliError> {
    if let Some(path) = &args.matrix {
        if args.synthetic.is_some() || args.mlp.is_some() || args.data.is_some() {
            return config("--matrix cannot be combined with --synthetic, --mlp or --data");
        }
        return Ok(Source::Matrix(dense::load_matrix(path)?));
    }
    let data = dataset(args, seed)?;
    match (data, &args.mlp) {
        (Some(data), Some(p)) => Ok(Source::Model {
            net: Mlp::load(p)?,
            data,
        }),
        (Some(data), None) => Ok(Source::Data(data)),
        (None, Some(_)) => config("--mlp needs a dataset (--data or --synthetic ccm:...,n=...)"),
        (None, None) => match &args.synthetic {
            Some(s) => Ok(Source::Matrix(synthetic_matrix(&Spec::parse(s)?, seed)?)),
            None => config("no input: pass --matrix, --synthetic, or --mlp with --data"),
        },
    }
}

/// A dataset and a network, initializing one with `widths` hidden units when
/// no checkpoint was given.
pub fn model(args: &SourceArgs, widths: &[usize], seed: u64) -> Result<(Mlp, ClassArray), CliError> {
    let Some(data) = dataset(args, seed)? else {
        return config("a dataset is required (--data or --synthetic ccm:d=..,c=..,n=..)");
    };
    let net = match &args.mlp {
        Some(p) => Mlp::load(p)?,
        None => {
            if widths.contains(&0) {
                return config("hidden widths must be positive");
            }
            let mut dims = vec![data.dim()];
            dims.extend_from_slice(widths);
            dims.push(data.classes());
            Mlp::init(&dims, seed)?
        }
    };
    Ok((net, data))
}

/// The layer for a per-layer quantity, or an error when none was given.
pub fn require_layer(q: Quantity, layer: Option<usize>) -> Result<usize, CliError> {
    layer.ok_or_else(|| CliError::Config(format!("--quantity {q:?} needs --layer")))
}

pub fn scope(layer: Option<usize>) -> Scope {
    layer.map_or(Scope::All, Scope::Layer)
}

fn layer_block(m: Matrix, net: &Mlp, layer: Option<usize>) -> Result<Matrix, CliError> {
    match layer {
        None => Ok(m),
        Some(l) if (1..=net.layers()).contains(&l) => {
            let (o, p) = (net.offset(l), net.layer_params(l));
            Ok(m.view((o, o), (p, p)).into_owned())
        }
        Some(l) => config(format!("layer {l} outside 1..={}", net.layers())),
    }
}

/// A dense matrix for `q` of a network. `W` yields `W W^T`.
pub fn model_matrix(
    net: &Mlp,
    data: &ClassArray,
    an: &Analysis,
    q: Quantity,
    layer: Option<usize>,
) -> Result<Matrix, CliError> {
    Ok(match q {
        Quantity::G => an.g_dense(scope(layer))?,
        Quantity::Kfac => match layer {
            Some(l) => an.kfac_layer(l)?,
            None => an.kfac_full()?,
        },
        Quantity::Cfac => match layer {
            Some(l) => an.cfac_layer(l)?,
            None => an.cfac_full()?,
        },
        Quantity::H => {
            let l = require_layer(q, layer)?;
            if l > an.layers() {
                return config(format!("feature layer {l} outside 0..={}", an.layers()));
            }
            an.feature_moment(l)?
        }
        Quantity::Delta => an.error_moment(require_layer(q, layer)?)?,
        Quantity::W => {
            let l = require_layer(q, layer)?;
            if l == 0 || l > net.layers() {
                return config(format!("layer {l} outside 1..={}", net.layers()));
            }
            let w = net.weight(l);
            let mut m = w * w.transpose();
            dense::symmetrize(&mut m);
            m
        }
        Quantity::Hess => layer_block(mlp::hessian_fd(net, data)?, net, layer)?,
        Quantity::E => {
            let mut e = mlp::hessian_fd(net, data)? - an.g_dense(Scope::All)?;
            dense::symmetrize(&mut e);
            layer_block(e, net, layer)?
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_lists_extend_previous_key() {
        let s = Spec::parse("spiked:n=300,spikes=5,4,3").unwrap();
        assert_eq!(s.kind, "spiked");
        assert_eq!(s.usize("n", None).unwrap(), 300);
        assert_eq!(s.f64_list("spikes").unwrap(), vec![5.0, 4.0, 3.0]);
    }

    #[test]
    fn spec_errors() {
        assert!(Spec::parse(":n=3").is_err());
        assert!(Spec::parse("goe:7").is_err());
        assert!(Spec::parse("goe:n=1,n=2").is_err());
        let s = Spec::parse("goe:n=x").unwrap();
        assert!(s.usize("n", None).is_err());
        assert!(s.usize("m", None).is_err());
        assert_eq!(s.usize("m", Some(4)).unwrap(), 4);
        assert!(Spec::parse("spiked:n=3,spikes=1,2").unwrap().usize("spikes", None).is_err());
    }

    #[test]
    fn ccm_spec_kind() {
        assert!(is_ccm_dataset(&Spec::parse("ccm:d=4,c=2,n=3").unwrap()));
        assert!(!is_ccm_dataset(&Spec::parse("ccm:d=4,c=2,alpha=0.3,s=1").unwrap()));
    }

    #[test]
    fn unknown_generator_and_keys() {
        assert!(synthetic_matrix(&Spec::parse("wigner:n=3").unwrap(), 0).is_err());
        assert!(synthetic_matrix(&Spec::parse("goe:n=3,q=1").unwrap(), 0).is_err());
        let m = synthetic_matrix(&Spec::parse("goe:n=5").unwrap(), 0).unwrap();
        assert_eq!(m.nrows(), 5);
    }
}
