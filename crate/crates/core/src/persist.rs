//! Line-oriented text format for trained networks.
//!
//! ```text
//! disgan-model 1
//! meta <key> <value>
//! net <name> mlp <dims> <activations>
//! net <name> identity|shift <D>
//! net <name> constant <v1,v2,...>
//! param <net>/<param> <frozen 0|1> <rows>x<cols> <v1> <v2> ...
//! ```
//!
//! Values are written with 17 significant digits, which is enough for
//! every `f64` to parse back to the identical bit pattern.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::classifier::{freeze, AuxiliaryClassifier, ClassifierNet};
use crate::diff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::gan::{Discriminator, GanBundle, Generator, LossWeights, Mapping};
use crate::nn::Mlp;

pub const MAGIC: &str = "disgan-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum NetRecord {
    Mlp(Mlp),
    Identity(usize),
    Shift(usize),
    Constant(Vec<f64>),
}

impl From<&Generator> for NetRecord {
    fn from(g: &Generator) -> Self {
        match g {
            Generator::Network(m) => NetRecord::Mlp(m.clone()),
            Generator::Identity { dim } => NetRecord::Identity(*dim),
            Generator::Shift { dim } => NetRecord::Shift(*dim),
            Generator::Constant { point } => NetRecord::Constant(point.clone()),
        }
    }
}

impl NetRecord {
    fn into_generator(self) -> Generator {
        match self {
            NetRecord::Mlp(m) => Generator::Network(m),
            NetRecord::Identity(dim) => Generator::Identity { dim },
            NetRecord::Shift(dim) => Generator::Shift { dim },
            NetRecord::Constant(point) => Generator::Constant { point },
        }
    }

    fn into_mlp(self, name: &str) -> Result<Mlp> {
        match self {
            NetRecord::Mlp(m) => Ok(m),
            _ => Err(Error::Parse {
                line: 0,
                msg: format!("net `{name}` must be an mlp"),
            }),
        }
    }
}

/// A parsed model file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelFile {
    pub meta: BTreeMap<String, String>,
    pub nets: BTreeMap<String, NetRecord>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl ModelFile {
    pub fn render(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, net) in &self.nets {
            match net {
                NetRecord::Mlp(m) => {
                    let _ = writeln!(out, "net {name} mlp {}", m.arch_string());
                    for (pname, p) in m.params.iter() {
                        let shape: Vec<String> = p.tensor.shape().iter().map(|d| d.to_string()).collect();
                        let _ = write!(out, "param {name}/{pname} {} {}", u8::from(p.frozen), shape.join("x"));
                        for v in p.tensor.values() {
                            out.push(' ');
                            out.push_str(&fmt_f64(*v));
                        }
                        out.push('\n');
                    }
                }
                NetRecord::Identity(d) => {
                    let _ = writeln!(out, "net {name} identity {d}");
                }
                NetRecord::Shift(d) => {
                    let _ = writeln!(out, "net {name} shift {d}");
                }
                NetRecord::Constant(p) => {
                    let vals: Vec<String> = p.iter().map(|v| fmt_f64(*v)).collect();
                    let _ = writeln!(out, "net {name} constant {}", vals.join(","));
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty model file".into(),
        })?;
        let expected = format!("{MAGIC} {VERSION}");
        if first.trim() != expected {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected `{expected}`, got `{first}`"),
            });
        }
        let mut file = ModelFile::default();
        // Architecture and parameters of each mlp until the end of the file.
        let mut pending: BTreeMap<String, (String, ParamSet)> = BTreeMap::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let err = |msg: String| Error::Parse { line: lineno, msg };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ' ');
            let tag = parts.next().unwrap_or_default();
            let name = parts.next().ok_or_else(|| err("missing name".into()))?;
            let rest = parts.next().unwrap_or("");
            match tag {
                "meta" => {
                    file.meta.insert(name.to_string(), rest.to_string());
                }
                "net" => {
                    if file.nets.contains_key(name) || pending.contains_key(name) {
                        return Err(err(format!("duplicate net `{name}`")));
                    }
                    let (kind, body) = rest.split_once(' ').ok_or_else(|| err("missing net body".into()))?;
                    let dim = || body.trim().parse::<usize>().map_err(|e| err(format!("dimension: {e}")));
                    match kind {
                        "mlp" => {
                            pending.insert(name.to_string(), (body.to_string(), ParamSet::new()));
                        }
                        "identity" => {
                            file.nets.insert(name.to_string(), NetRecord::Identity(dim()?));
                        }
                        "shift" => {
                            file.nets.insert(name.to_string(), NetRecord::Shift(dim()?));
                        }
                        "constant" => {
                            let vals = body
                                .split(',')
                                .map(|v| v.parse::<f64>().map_err(|e| err(format!("`{v}`: {e}"))))
                                .collect::<Result<Vec<_>>>()?;
                            file.nets.insert(name.to_string(), NetRecord::Constant(vals));
                        }
                        other => return Err(err(format!("unknown net kind `{other}`"))),
                    }
                }
                "param" => {
                    let (net, pname) = name.rsplit_once('/').ok_or_else(|| err(format!("bad param name `{name}`")))?;
                    let (_, params) = pending
                        .get_mut(net)
                        .ok_or_else(|| err(format!("param for undeclared net `{net}`")))?;
                    let mut fields = rest.split_whitespace();
                    let frozen = match fields.next() {
                        Some("0") => false,
                        Some("1") => true,
                        other => return Err(err(format!("frozen flag must be 0 or 1, got {other:?}"))),
                    };
                    let shape = fields
                        .next()
                        .ok_or_else(|| err("missing shape".into()))?
                        .split('x')
                        .map(|d| d.parse::<usize>().map_err(|e| err(format!("shape: {e}"))))
                        .collect::<Result<Vec<_>>>()?;
                    let values = fields
                        .map(|v| v.parse::<f64>().map_err(|e| err(format!("`{v}`: {e}"))))
                        .collect::<Result<Vec<_>>>()?;
                    let tensor = Tensor::new(shape, values).map_err(|e| err(e.to_string()))?;
                    params.insert(pname, tensor);
                    params.set_frozen(pname, frozen)?;
                }
                other => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        for (name, (arch, params)) in pending {
            let (dims, acts) = Mlp::parse_arch(&arch)?;
            let mlp = Mlp::from_parts(dims, acts, params).map_err(|e| Error::Parse {
                line: 0,
                msg: format!("net `{name}`: {e}"),
            })?;
            file.nets.insert(name, NetRecord::Mlp(mlp));
        }
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    fn take(&mut self, name: &str) -> Result<NetRecord> {
        self.nets.remove(name).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing net `{name}`"),
        })
    }

    fn meta_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta.get(key).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing meta `{key}`"),
        })?;
        raw.parse().map_err(|_| Error::Parse {
            line: 0,
            msg: format!("meta `{key}`: cannot parse `{raw}`"),
        })
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.meta.get("kind") {
            Some(k) if k == kind => Ok(()),
            other => Err(Error::Parse {
                line: 0,
                msg: format!("expected a {kind} model, found {other:?}"),
            }),
        }
    }

    fn put_classifier(&mut self, prefix: &str, net: &ClassifierNet) {
        self.nets.insert(format!("{prefix}.extractor"), NetRecord::Mlp(net.extractor.clone()));
        self.nets.insert(format!("{prefix}.head"), NetRecord::Mlp(net.head.clone()));
    }

    fn take_classifier(&mut self, prefix: &str) -> Result<ClassifierNet> {
        let ex = format!("{prefix}.extractor");
        let hd = format!("{prefix}.head");
        let extractor = self.take(&ex)?.into_mlp(&ex)?;
        let head = self.take(&hd)?.into_mlp(&hd)?;
        if head.in_dim() != extractor.out_dim() || head.out_dim() != 1 || head.activations().len() != 1 {
            return Err(Error::Parse {
                line: 0,
                msg: format!("`{prefix}` head does not fit its extractor"),
            });
        }
        Ok(ClassifierNet { extractor, head })
    }
}

pub fn classifier_to_string(net: &ClassifierNet) -> String {
    let mut f = ModelFile::default();
    f.meta.insert("kind".into(), "classifier".into());
    f.put_classifier("classifier", net);
    f.render()
}

pub fn classifier_from_str(text: &str) -> Result<ClassifierNet> {
    let mut f = ModelFile::parse(text)?;
    f.expect_kind("classifier")?;
    f.take_classifier("classifier")
}

pub fn aux_to_string(aux: &AuxiliaryClassifier) -> String {
    let mut f = ModelFile::default();
    f.meta.insert("kind".into(), "auxiliary".into());
    f.put_classifier("aux", aux.net());
    f.render()
}

pub fn aux_from_str(text: &str) -> Result<AuxiliaryClassifier> {
    let mut f = ModelFile::parse(text)?;
    f.expect_kind("auxiliary")?;
    Ok(freeze(&f.take_classifier("aux")?))
}

/// Generators, discriminators, loss weights and the frozen classifier.
pub fn bundle_to_string(bundle: &GanBundle) -> String {
    let mut f = ModelFile::default();
    let w = bundle.weights;
    for (k, v) in [
        ("kind", "bundle".to_string()),
        ("lambda_ver_dis", w.ver_dis.to_string()),
        ("lambda_hor_dis", w.hor_dis.to_string()),
        ("lambda_inter_cyc", w.inter_cyc.to_string()),
        ("lambda_intra_cyc", w.intra_cyc.to_string()),
        ("normalize_vertical", bundle.normalize.to_string()),
    ] {
        f.meta.insert(k.into(), v);
    }
    f.put_classifier("aux", bundle.aux().net());
    for m in Mapping::ALL {
        f.nets.insert(format!("gen.{m}"), NetRecord::from(bundle.generator(m)));
        f.nets.insert(format!("disc.{m}"), NetRecord::Mlp(bundle.discriminator(m).0.clone()));
    }
    f.render()
}

pub fn bundle_from_str(text: &str) -> Result<GanBundle> {
    let mut f = ModelFile::parse(text)?;
    f.expect_kind("bundle")?;
    let weights = LossWeights {
        ver_dis: f.meta_value("lambda_ver_dis")?,
        hor_dis: f.meta_value("lambda_hor_dis")?,
        inter_cyc: f.meta_value("lambda_inter_cyc")?,
        intra_cyc: f.meta_value("lambda_intra_cyc")?,
    };
    let normalize = f.meta_value("normalize_vertical")?;
    let aux = Arc::new(freeze(&f.take_classifier("aux")?));
    let mut gens = Vec::with_capacity(4);
    let mut discs = Vec::with_capacity(4);
    for m in Mapping::ALL {
        gens.push(f.take(&format!("gen.{m}"))?.into_generator());
        let name = format!("disc.{m}");
        discs.push(Discriminator(f.take(&name)?.into_mlp(&name)?));
    }
    GanBundle::from_parts(
        aux,
        gens.try_into().expect("four"),
        discs.try_into().expect("four"),
        weights,
        normalize,
    )
}

pub fn save_classifier(path: &Path, net: &ClassifierNet) -> Result<()> {
    std::fs::write(path, classifier_to_string(net))?;
    Ok(())
}

pub fn load_classifier(path: &Path) -> Result<ClassifierNet> {
    classifier_from_str(&std::fs::read_to_string(path)?)
}

pub fn save_bundle(path: &Path, bundle: &GanBundle) -> Result<()> {
    std::fs::write(path, bundle_to_string(bundle))?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<GanBundle> {
    bundle_from_str(&std::fs::read_to_string(path)?)
}
