//! Trained model directories: `model.json` plus one file per
//! `(slice, coil)`, named `net_s{slice}_c{coil}.rakinet` or
//! `kernel_s{slice}_c{coil}.grappa`.

use anyhow::{bail, Context, Result};
use raki_core::grappa::{read_kernel, write_kernel, GrappaBank, GrappaMethod};
use raki_core::harness::HyperParams;
use raki_core::net::io::{read_network, write_network};
use raki_core::net::{NetworkBank, Unaliaser};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Raki,
    SliceGrappa,
    SplitSliceGrappa,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub method: Method,
    pub sms_factor: usize,
    pub coils: usize,
    pub shifts: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub hyper: Option<HyperParams>,
}

fn net_name(s: usize, c: usize) -> String {
    format!("net_s{s}_c{c}.rakinet")
}

fn kernel_name(s: usize, c: usize) -> String {
    format!("kernel_s{s}_c{c}.grappa")
}

pub fn save_networks(dir: &Path, manifest: &Manifest, bank: &NetworkBank) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for s in 0..bank.sms_factor {
        for c in 0..bank.coils {
            write_network(dir.join(net_name(s, c)), bank.get(s, c)?)?;
        }
    }
    write_manifest(dir, manifest)
}

pub fn save_kernels(dir: &Path, manifest: &Manifest, bank: &GrappaBank) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for k in &bank.kernels {
        write_kernel(dir.join(kernel_name(k.target_slice, k.target_coil)), k)?;
    }
    write_manifest(dir, manifest)
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::write(dir.join("model.json"), serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<(Manifest, Box<dyn Unaliaser>)> {
    let path = dir.join("model.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if m.shifts.len() != m.sms_factor {
        bail!("{}: {} shifts for {} slices", path.display(), m.shifts.len(), m.sms_factor);
    }
    let model: Box<dyn Unaliaser> = match m.method {
        Method::Raki => {
            let mut bank = NetworkBank::new(m.sms_factor, m.coils, m.shifts.clone())?;
            for s in 0..m.sms_factor {
                for c in 0..m.coils {
                    let p = dir.join(net_name(s, c));
                    let net = read_network(&p).with_context(|| format!("reading {}", p.display()))?;
                    bank.insert(s, c, net)?;
                }
            }
            Box::new(bank)
        }
        Method::SliceGrappa | Method::SplitSliceGrappa => {
            let mut kernels = Vec::with_capacity(m.sms_factor * m.coils);
            for s in 0..m.sms_factor {
                for c in 0..m.coils {
                    let p = dir.join(kernel_name(s, c));
                    kernels.push(read_kernel(&p).with_context(|| format!("reading {}", p.display()))?);
                }
            }
            Box::new(GrappaBank {
                method: if m.method == Method::SliceGrappa { GrappaMethod::Slice } else { GrappaMethod::SplitSlice },
                shifts: m.shifts.clone(),
                coils: m.coils,
                kernels,
            })
        }
    };
    Ok((m, model))
}
