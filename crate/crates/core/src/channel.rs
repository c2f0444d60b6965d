//! Physical channel `y = h·x + δ` over AWGN or flat Rayleigh fading.
//!
//! SNR is per real coordinate, measured against the mean power of the
//! constellation actually in use. Complex packing applies one complex fading
//! coefficient and circular Gaussian noise per channel use; real packing
//! applies real scalars per coordinate.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::encoder::{unpack, EmbeddingTable, Packing, SymbolStream};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelModel {
    Awgn,
    Rayleigh,
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelModel::Awgn => "awgn",
            ChannelModel::Rayleigh => "rayleigh",
        })
    }
}

impl FromStr for ChannelModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(ChannelModel::Awgn),
            "rayleigh" => Ok(ChannelModel::Rayleigh),
            _ => invalid(format!("unknown channel model {s:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChannelConfig {
    pub model: ChannelModel,
    /// `f64::INFINITY` gives a noiseless channel.
    pub snr_db: f64,
    pub packing: Packing,
    /// Whether the receiver knows `h` and equalizes by it.
    pub csi_at_receiver: bool,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn awgn(snr_db: f64, seed: u64) -> Self {
        Self {
            model: ChannelModel::Awgn,
            snr_db,
            packing: Packing::Real,
            csi_at_receiver: false,
            seed,
        }
    }

    pub fn rayleigh(snr_db: f64, seed: u64) -> Self {
        Self {
            model: ChannelModel::Rayleigh,
            snr_db,
            packing: Packing::Real,
            csi_at_receiver: true,
            seed,
        }
    }

    pub fn with_packing(mut self, packing: Packing) -> Self {
        self.packing = packing;
        self
    }
}

/// Mean squared value per real coordinate over all entity rows.
pub fn measure_signal_power(table: &EmbeddingTable) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for row in table.entity_rows() {
        sum += row.iter().map(|x| x * x).sum::<f64>();
        count += row.len();
    }
    if count == 0 {
        return invalid("empty embedding table");
    }
    Ok(sum / count as f64)
}

/// Noise standard deviation per real coordinate: `σ² = P / 10^(snr/10)`.
pub fn snr_to_sigma(snr_db: f64, signal_power_per_dim: f64) -> Result<f64> {
    if !(signal_power_per_dim > 0.0) || !signal_power_per_dim.is_finite() {
        return invalid(format!("signal power must be positive, got {signal_power_per_dim}"));
    }
    if snr_db.is_nan() {
        return invalid("SNR is NaN");
    }
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    Ok((signal_power_per_dim / 10f64.powf(snr_db / 10.0)).sqrt())
}

/// Everything that happened to one transmitted stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitRecord {
    pub packing: Packing,
    pub sent: Vec<Complex64>,
    pub fading: Vec<Complex64>,
    pub noise: Vec<Complex64>,
    pub received: Vec<Complex64>,
    pub csi: bool,
}

impl TransmitRecord {
    pub fn len(&self) -> usize {
        self.sent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sent.is_empty()
    }

    /// Received coordinates, divided by `h` first when the receiver has CSI.
    pub fn equalized(&self) -> Vec<f64> {
        if !self.csi {
            return unpack(self.packing, &self.received);
        }
        let eq: Vec<Complex64> = self
            .received
            .iter()
            .zip(&self.fading)
            .map(|(y, h)| match self.packing {
                // real packing keeps h on the real axis
                Packing::Real => Complex64::new(y.re / h.re, 0.0),
                Packing::Complex => y / h,
            })
            .collect();
        unpack(self.packing, &eq)
    }

    /// CSV with columns `index,x,h,delta,y`. Complex values print as `re+imi`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "x", "h", "delta", "y"])?;
        let fmt = |c: &Complex64| match self.packing {
            Packing::Real => c.re.to_string(),
            Packing::Complex => format!("{}{:+}i", c.re, c.im),
        };
        for i in 0..self.len() {
            out.write_record([
                i.to_string(),
                fmt(&self.sent[i]),
                fmt(&self.fading[i]),
                fmt(&self.noise[i]),
                fmt(&self.received[i]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A seeded channel instance. Successive transmissions continue the same
/// random stream.
#[derive(Debug, Clone)]
pub struct Channel {
    cfg: ChannelConfig,
    sigma: f64,
    rng: ChaCha8Rng,
    fixed_fading: Option<Complex64>,
}

impl Channel {
    pub fn new(cfg: ChannelConfig, signal_power_per_dim: f64) -> Result<Self> {
        let sigma = snr_to_sigma(cfg.snr_db, signal_power_per_dim)?;
        Ok(Self::with_sigma(cfg, sigma))
    }

    pub fn with_sigma(cfg: ChannelConfig, sigma: f64) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self {
            cfg,
            sigma,
            rng,
            fixed_fading: None,
        }
    }

    /// Replaces random fading by a constant coefficient.
    pub fn with_fixed_fading(mut self, h: Complex64) -> Self {
        self.fixed_fading = Some(h);
        self
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    fn draw_fading(&mut self) -> Complex64 {
        if let Some(h) = self.fixed_fading {
            return h;
        }
        match self.cfg.model {
            ChannelModel::Awgn => Complex64::new(1.0, 0.0),
            ChannelModel::Rayleigh => {
                let half = std::f64::consts::FRAC_1_SQRT_2;
                let a: f64 = StandardNormal.sample(&mut self.rng);
                let b: f64 = StandardNormal.sample(&mut self.rng);
                match self.cfg.packing {
                    Packing::Complex => Complex64::new(a * half, b * half),
                    // magnitude of CN(0,1): Rayleigh with E[h^2] = 1
                    Packing::Real => Complex64::new((a * a + b * b).sqrt() * half, 0.0),
                }
            }
        }
    }

    fn draw_noise(&mut self) -> Complex64 {
        if self.sigma == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let n = Normal::new(0.0, self.sigma).expect("finite sigma");
        match self.cfg.packing {
            Packing::Real => Complex64::new(n.sample(&mut self.rng), 0.0),
            Packing::Complex => Complex64::new(n.sample(&mut self.rng), n.sample(&mut self.rng)),
        }
    }

    pub fn transmit(&mut self, x: &SymbolStream) -> Result<TransmitRecord> {
        if x.packing != self.cfg.packing {
            return invalid(format!(
                "stream packed as {} but channel expects {}",
                x.packing, self.cfg.packing
            ));
        }
        if x.symbols.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return invalid("non-finite symbol");
        }
        let mut rec = TransmitRecord {
            packing: x.packing,
            sent: x.symbols.clone(),
            fading: Vec::with_capacity(x.len()),
            noise: Vec::with_capacity(x.len()),
            received: Vec::with_capacity(x.len()),
            csi: self.cfg.csi_at_receiver,
        };
        for &s in &x.symbols {
            let h = self.draw_fading();
            let d = self.draw_noise();
            rec.fading.push(h);
            rec.noise.push(d);
            rec.received.push(h * s + d);
        }
        Ok(rec)
    }
}

/// One-shot transmission on a fresh channel seeded from `cfg.seed`.
pub fn transmit(x: &SymbolStream, cfg: &ChannelConfig, signal_power_per_dim: f64) -> Result<TransmitRecord> {
    Channel::new(cfg.clone(), signal_power_per_dim)?.transmit(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{pack_symbols, Norm};
    use approx::assert_relative_eq;

    #[test]
    fn power_examples() {
        let n = 4;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let t = EmbeddingTable::from_rows(&rows, &[], Norm::L2).unwrap();
        assert_relative_eq!(measure_signal_power(&t).unwrap(), 1.0 / n as f64);
        let zeros = EmbeddingTable::zeros(3, 0, 4, 4, Norm::L1);
        assert_eq!(measure_signal_power(&zeros).unwrap(), 0.0);
        assert!(snr_to_sigma(0.0, 0.0).is_err());
        let empty = EmbeddingTable::zeros(0, 0, 4, 4, Norm::L1);
        assert!(measure_signal_power(&empty).is_err());
    }

    #[test]
    fn sigma_examples() {
        assert_relative_eq!(snr_to_sigma(0.0, 0.3).unwrap().powi(2), 0.3, epsilon = 1e-15);
        assert_relative_eq!(snr_to_sigma(10.0, 1.0).unwrap().powi(2), 0.1, epsilon = 1e-15);
        assert_eq!(snr_to_sigma(f64::INFINITY, 1.0).unwrap(), 0.0);
        assert!(snr_to_sigma(300.0, 1.0).unwrap() < 1e-14);
        assert!(snr_to_sigma(3.0, -1.0).is_err());
    }

    #[test]
    fn noiseless_awgn_is_identity() {
        let x = pack_symbols(&[0.5, -1.25, 3.0, 0.0], Packing::Real).unwrap();
        let rec = transmit(&x, &ChannelConfig::awgn(f64::INFINITY, 1), 1.0).unwrap();
        assert_eq!(rec.received, rec.sent);
        assert!(rec.fading.iter().all(|h| *h == Complex64::new(1.0, 0.0)));
        let xc = pack_symbols(&[0.5, -1.25, 3.0, 0.0], Packing::Complex).unwrap();
        let cfg = ChannelConfig::awgn(f64::INFINITY, 1).with_packing(Packing::Complex);
        assert_eq!(transmit(&xc, &cfg, 1.0).unwrap().received, xc.symbols);
    }

    #[test]
    fn fixed_fading_scales() {
        let x = pack_symbols(&[1.0, 2.0, -3.0], Packing::Real).unwrap();
        let mut ch = Channel::with_sigma(ChannelConfig::rayleigh(0.0, 0), 0.0).with_fixed_fading(Complex64::new(2.0, 0.0));
        let rec = ch.transmit(&x).unwrap();
        assert_eq!(unpack(Packing::Real, &rec.received), vec![2.0, 4.0, -6.0]);
        assert_eq!(rec.equalized(), vec![1.0, 2.0, -3.0]);
    }

    #[test]
    fn noise_variance_matches_snr() {
        let x = pack_symbols(&vec![0.0; 100_000], Packing::Real).unwrap();
        let rec = transmit(&x, &ChannelConfig::awgn(10.0, 3), 1.0).unwrap();
        let var = rec.noise.iter().map(|d| d.re * d.re).sum::<f64>() / rec.len() as f64;
        assert!((var - 0.1).abs() / 0.1 < 0.02, "variance {var}");
        // complex packing: per real coordinate variance stays sigma^2
        let xc = pack_symbols(&vec![0.0; 100_000], Packing::Complex).unwrap();
        let rec = transmit(&xc, &ChannelConfig::awgn(10.0, 4).with_packing(Packing::Complex), 1.0).unwrap();
        let var = rec.noise.iter().map(|d| d.norm_sqr()).sum::<f64>() / (2 * rec.len()) as f64;
        assert!((var - 0.1).abs() / 0.1 < 0.02, "variance {var}");
    }

    #[test]
    fn rayleigh_power_is_unit() {
        for packing in [Packing::Real, Packing::Complex] {
            let x = pack_symbols(&vec![1.0; 200_000], packing).unwrap();
            let rec = transmit(&x, &ChannelConfig::rayleigh(20.0, 9).with_packing(packing), 1.0).unwrap();
            let e = rec.fading.iter().map(|h| h.norm_sqr()).sum::<f64>() / rec.len() as f64;
            assert!((0.98..=1.02).contains(&e), "{packing}: E[h^2] = {e}");
        }
    }

    #[test]
    fn same_seed_same_record() {
        let x = pack_symbols(&[0.1, 0.2, 0.3, 0.4], Packing::Complex).unwrap();
        let cfg = ChannelConfig::rayleigh(5.0, 77).with_packing(Packing::Complex);
        assert_eq!(transmit(&x, &cfg, 0.25).unwrap(), transmit(&x, &cfg, 0.25).unwrap());
    }

    #[test]
    fn packing_mismatch_and_nan_rejected() {
        let x = pack_symbols(&[0.1, 0.2], Packing::Complex).unwrap();
        assert!(transmit(&x, &ChannelConfig::awgn(5.0, 0), 1.0).is_err());
        let bad = pack_symbols(&[f64::NAN], Packing::Real).unwrap();
        assert!(transmit(&bad, &ChannelConfig::awgn(5.0, 0), 1.0).is_err());
    }

    #[test]
    fn record_csv_has_header_and_rows() {
        let x = pack_symbols(&[1.0, 2.0], Packing::Complex).unwrap();
        let rec = transmit(&x, &ChannelConfig::awgn(f64::INFINITY, 0).with_packing(Packing::Complex), 1.0).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("index,x,h,delta,y"));
        assert_eq!(text.lines().nth(1), Some("0,1+2i,1+0i,0+0i,1+2i"));
    }
}
