use super::RakiNetwork;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::sim::{shift_multicoil, MultiCoil};

/// Anything that estimates every slice's multi-coil k-space from one
/// aliased frame.
pub trait Unaliaser: Sync {
    fn sms_factor(&self) -> usize;
    fn coil_count(&self) -> usize;
    /// Applied CAIPI shift of each slice, in voxels.
    fn shifts(&self) -> &[f64];
    /// Estimate of `(slice, coil)` in the acquisition (shifted) frame.
    fn estimate(&self, slice: usize, coil: usize, aliased: &MultiCoil) -> Result<Vec<num_complex::Complex64>>;

    /// Per-slice estimates in the acquisition frame.
    fn unalias_shifted(&self, aliased: &MultiCoil, exec: Exec) -> Result<Vec<MultiCoil>> {
        if aliased.coil_count() != self.coil_count() {
            return Err(Error::Dimension(format!(
                "frame has {} coils, model expects {}",
                aliased.coil_count(),
                self.coil_count()
            )));
        }
        let (n, coils) = (self.sms_factor(), self.coil_count());
        let planes = exec.map_range(n * coils, |i| self.estimate(i / coils, i % coils, aliased));
        let mut out = vec![MultiCoil::zeros(aliased.grid, coils); n];
        for (i, p) in planes.into_iter().enumerate() {
            out[i / coils].coils[i % coils] = p?;
        }
        Ok(out)
    }

    /// Per-slice estimates with the CAIPI shift removed.
    fn unalias(&self, aliased: &MultiCoil, exec: Exec) -> Result<Vec<MultiCoil>> {
        let shifted = self.unalias_shifted(aliased, exec)?;
        Ok(shifted.iter().zip(self.shifts()).map(|(mc, &d)| shift_multicoil(mc, -d)).collect())
    }
}

/// One trained network per `(slice, coil)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkBank {
    pub sms_factor: usize,
    pub coils: usize,
    pub shifts: Vec<f64>,
    nets: Vec<Option<RakiNetwork>>,
}

impl NetworkBank {
    pub fn new(sms_factor: usize, coils: usize, shifts: Vec<f64>) -> Result<Self> {
        if shifts.len() != sms_factor {
            return Err(Error::Dimension(format!("{} shifts for {sms_factor} slices", shifts.len())));
        }
        Ok(Self {
            sms_factor,
            coils,
            shifts,
            nets: vec![None; sms_factor * coils],
        })
    }

    fn slot(&self, slice: usize, coil: usize) -> Result<usize> {
        if slice >= self.sms_factor || coil >= self.coils {
            return Err(Error::Index(format!(
                "(slice {slice}, coil {coil}) outside {}x{}",
                self.sms_factor, self.coils
            )));
        }
        Ok(slice * self.coils + coil)
    }

    pub fn insert(&mut self, slice: usize, coil: usize, net: RakiNetwork) -> Result<()> {
        if net.config.in_channels != 2 * self.coils {
            return Err(Error::Dimension(format!(
                "network takes {} channels, bank has {} coils",
                net.config.in_channels, self.coils
            )));
        }
        let i = self.slot(slice, coil)?;
        self.nets[i] = Some(net);
        Ok(())
    }

    pub fn get(&self, slice: usize, coil: usize) -> Result<&RakiNetwork> {
        let i = self.slot(slice, coil)?;
        self.nets[i]
            .as_ref()
            .ok_or_else(|| Error::Index(format!("no network for slice {slice}, coil {coil}")))
    }

    pub fn is_complete(&self) -> bool {
        self.nets.iter().all(Option::is_some)
    }
}

impl Unaliaser for NetworkBank {
    fn sms_factor(&self) -> usize {
        self.sms_factor
    }

    fn coil_count(&self) -> usize {
        self.coils
    }

    fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    fn estimate(&self, slice: usize, coil: usize, aliased: &MultiCoil) -> Result<Vec<num_complex::Complex64>> {
        let net = self.get(slice, coil)?;
        let x = aliased.to_tensor().scaled(net.scale);
        let y = net.infer(&x)?.scaled(1.0 / net.scale);
        Ok(y.to_complex_planes()?.remove(0))
    }
}
