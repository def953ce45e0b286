use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use super::FrontendError;
use crate::signal::FirCoefficients;
#[allow(unused_imports)]
use num_traits::Float;

/// Parameterization of one learnable front-end kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum FrontendKind {
    /// Every tap is a free parameter.
    Free,
    /// Symmetric, odd length.
    #[cfg_attr(feature = "serde", serde(rename = "type1"))]
    TypeI,
    /// Symmetric, even length.
    #[cfg_attr(feature = "serde", serde(rename = "type2"))]
    TypeII,
    /// Anti-symmetric, odd length (center tap fixed at zero).
    #[cfg_attr(feature = "serde", serde(rename = "type3"))]
    TypeIII,
    /// Anti-symmetric, even length.
    #[cfg_attr(feature = "serde", serde(rename = "type4"))]
    TypeIV,
    /// Free taps applied forward then time-reversed, giving `|H|^2`.
    #[cfg_attr(feature = "serde", serde(rename = "zerophase"))]
    ZeroPhase,
    /// Four-parameter gammatone impulse response.
    Gammatone,
}

impl FrontendKind {
    pub const ALL: [FrontendKind; 7] = [
        FrontendKind::Free,
        FrontendKind::TypeI,
        FrontendKind::TypeII,
        FrontendKind::TypeIII,
        FrontendKind::TypeIV,
        FrontendKind::ZeroPhase,
        FrontendKind::Gammatone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FrontendKind::Free => "free",
            FrontendKind::TypeI => "type1",
            FrontendKind::TypeII => "type2",
            FrontendKind::TypeIII => "type3",
            FrontendKind::TypeIV => "type4",
            FrontendKind::ZeroPhase => "zerophase",
            FrontendKind::Gammatone => "gammatone",
        }
    }

    pub fn is_linear_phase(self) -> bool {
        matches!(
            self,
            FrontendKind::TypeI
                | FrontendKind::TypeII
                | FrontendKind::TypeIII
                | FrontendKind::TypeIV
        )
    }

    pub fn is_antisymmetric(self) -> bool {
        matches!(self, FrontendKind::TypeIII | FrontendKind::TypeIV)
    }

    /// Default kernel length: 61 for kinds that need or accept odd lengths, 60 for even-only kinds.
    pub fn default_len(self) -> usize {
        match self {
            FrontendKind::TypeII | FrontendKind::TypeIV => 60,
            _ => 61,
        }
    }

    pub fn check_len(self, len: usize) -> Result<(), FrontendError> {
        let ok = match self {
            FrontendKind::TypeI => len % 2 == 1,
            FrontendKind::TypeIII => len % 2 == 1 && len >= 3,
            FrontendKind::TypeII | FrontendKind::TypeIV => len % 2 == 0 && len >= 2,
            FrontendKind::Free | FrontendKind::ZeroPhase | FrontendKind::Gammatone => len >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(FrontendError::Parity { kind: self, len })
        }
    }

    /// The length rule [`check_len`](Self::check_len) enforces.
    pub fn len_requirement(self) -> &'static str {
        match self {
            FrontendKind::TypeI => "an odd length",
            FrontendKind::TypeIII => "an odd length of at least 3",
            FrontendKind::TypeII | FrontendKind::TypeIV => "an even length of at least 2",
            FrontendKind::Free | FrontendKind::ZeroPhase | FrontendKind::Gammatone => {
                "at least one tap"
            }
        }
    }

    /// Number of free parameters for a kernel of `len` taps.
    pub fn param_count(self, len: usize) -> usize {
        match self {
            FrontendKind::Free | FrontendKind::ZeroPhase => len,
            FrontendKind::TypeI | FrontendKind::TypeII => len.div_ceil(2),
            FrontendKind::TypeIII => len / 2,
            FrontendKind::TypeIV => len / 2,
            FrontendKind::Gammatone => 4,
        }
    }
}

impl fmt::Display for FrontendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FrontendKind {
    type Err = FrontendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "free" => FrontendKind::Free,
            "type1" | "typei" | "type-i" | "i" => FrontendKind::TypeI,
            "type2" | "typeii" | "type-ii" | "ii" => FrontendKind::TypeII,
            "type3" | "typeiii" | "type-iii" | "iii" => FrontendKind::TypeIII,
            "type4" | "typeiv" | "type-iv" | "iv" => FrontendKind::TypeIV,
            "zerophase" | "zero-phase" | "zp" => FrontendKind::ZeroPhase,
            "gammatone" | "gt" => FrontendKind::Gammatone,
            _ => return Err(FrontendError::UnknownKind),
        })
    }
}

/// Gammatone parameters in per-sample units; the phase is fixed at zero.
///
/// `g(n) = alpha * t^(eta - 1) * exp(-2 pi beta t) * cos(2 pi f t)` with
/// `t = n + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GammatoneParams {
    pub alpha: f64,
    pub eta: f64,
    pub beta: f64,
    pub f: f64,
}

impl GammatoneParams {
    pub const MIN_ALPHA: f64 = 1e-12;
    pub const MIN_ETA: f64 = 1.01;
    pub const MIN_BETA: f64 = 1e-6;
    pub const MIN_F: f64 = 1e-4;
    pub const MAX_F: f64 = 0.4999;

    pub fn new(alpha: f64, eta: f64, beta: f64, f: f64) -> Result<Self, FrontendError> {
        let p = Self {
            alpha,
            eta,
            beta,
            f,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), FrontendError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(FrontendError::InvalidGammatone("alpha must be positive"));
        }
        if !(self.eta >= 1.0 && self.eta.is_finite()) {
            return Err(FrontendError::InvalidGammatone("eta must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(FrontendError::InvalidGammatone("beta must be positive"));
        }
        if !(self.f > 0.0 && self.f < 0.5) {
            return Err(FrontendError::InvalidGammatone(
                "f must lie in (0, 0.5) cycles/sample",
            ));
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.alpha, self.eta, self.beta, self.f]
    }

    pub fn from_slice(p: &[f64]) -> Result<Self, FrontendError> {
        match *p {
            [alpha, eta, beta, f] => Self::new(alpha, eta, beta, f),
            _ => Err(FrontendError::ParamCount {
                expected: 4,
                got: p.len(),
            }),
        }
    }

    /// Keeps the parameters inside the region where the impulse response and
    /// its gradients are well defined.
    pub fn clamp(&mut self) {
        self.alpha = self.alpha.max(Self::MIN_ALPHA);
        self.eta = self.eta.max(Self::MIN_ETA);
        self.beta = self.beta.max(Self::MIN_BETA);
        self.f = self.f.clamp(Self::MIN_F, Self::MAX_F);
    }

    fn envelope(&self, t: f64) -> f64 {
        t.powf(self.eta - 1.0) * (-2.0 * PI * self.beta * t).exp()
    }

    /// Tap `n` (0-based).
    pub fn tap(&self, n: usize) -> f64 {
        let t = (n + 1) as f64;
        self.alpha * self.envelope(t) * (2.0 * PI * self.f * t).cos()
    }

    pub fn kernel(&self, len: usize) -> Vec<f64> {
        (0..len).map(|n| self.tap(n)).collect()
    }

    /// Per-tap partial derivatives `[dg/dalpha, dg/deta, dg/dbeta, dg/df]`.
    pub fn tap_partials(&self, len: usize) -> [Vec<f64>; 4] {
        let mut out = [
            vec![0.0; len],
            vec![0.0; len],
            vec![0.0; len],
            vec![0.0; len],
        ];
        for n in 0..len {
            let t = (n + 1) as f64;
            let env = self.envelope(t);
            let phase = 2.0 * PI * self.f * t;
            let g = self.alpha * env * phase.cos();
            out[0][n] = env * phase.cos();
            out[1][n] = g * t.ln();
            out[2][n] = -2.0 * PI * t * g;
            out[3][n] = -2.0 * PI * t * self.alpha * env * phase.sin();
        }
        out
    }
}

/// Builds the full tap vector of a kernel from its free parameters.
pub fn materialize(
    kind: FrontendKind,
    len: usize,
    params: &[f64],
) -> Result<Vec<f64>, FrontendError> {
    kind.check_len(len)?;
    let expected = kind.param_count(len);
    if params.len() != expected {
        return Err(FrontendError::ParamCount {
            expected,
            got: params.len(),
        });
    }
    Ok(match kind {
        FrontendKind::Free | FrontendKind::ZeroPhase => params.to_vec(),
        FrontendKind::TypeI | FrontendKind::TypeII => {
            let mut h = vec![0.0; len];
            for (i, &p) in params.iter().enumerate() {
                h[i] = p;
                h[len - 1 - i] = p;
            }
            h
        }
        FrontendKind::TypeIII | FrontendKind::TypeIV => {
            let mut h = vec![0.0; len];
            for (i, &p) in params.iter().enumerate() {
                h[i] = p;
                h[len - 1 - i] = -p;
            }
            h
        }
        FrontendKind::Gammatone => GammatoneParams::from_slice(params)?.kernel(len),
    })
}

/// Projects an arbitrary tap vector onto the kind's parameterization
/// (average or anti-average of mirrored taps for Type I–IV).
pub fn project_taps(kind: FrontendKind, taps: &[f64]) -> Result<Vec<f64>, FrontendError> {
    let len = taps.len();
    kind.check_len(len)?;
    Ok(match kind {
        FrontendKind::Free | FrontendKind::ZeroPhase => taps.to_vec(),
        FrontendKind::TypeI | FrontendKind::TypeII => (0..kind.param_count(len))
            .map(|i| 0.5 * (taps[i] + taps[len - 1 - i]))
            .collect(),
        FrontendKind::TypeIII | FrontendKind::TypeIV => (0..kind.param_count(len))
            .map(|i| 0.5 * (taps[i] - taps[len - 1 - i]))
            .collect(),
        FrontendKind::Gammatone => return Err(FrontendError::NotProjectable),
    })
}

/// One learnable FIR kernel; the materialized taps are kept in sync with the
/// free parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendKernel {
    kind: FrontendKind,
    len: usize,
    params: Vec<f64>,
    taps: FirCoefficients,
}

impl FrontendKernel {
    pub fn new(kind: FrontendKind, len: usize, params: Vec<f64>) -> Result<Self, FrontendError> {
        let taps = materialize(kind, len, &params)?;
        let taps = FirCoefficients::new(taps).map_err(|_| FrontendError::NonFinite)?;
        Ok(Self {
            kind,
            len,
            params,
            taps,
        })
    }

    pub fn from_taps(kind: FrontendKind, taps: &[f64]) -> Result<Self, FrontendError> {
        let params = project_taps(kind, taps)?;
        Self::new(kind, taps.len(), params)
    }

    pub fn gammatone(params: GammatoneParams, len: usize) -> Result<Self, FrontendError> {
        Self::new(FrontendKind::Gammatone, len, params.to_array().to_vec())
    }

    pub fn kind(&self) -> FrontendKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn taps(&self) -> &FirCoefficients {
        &self.taps
    }

    pub fn materialize(&self) -> FirCoefficients {
        self.taps.clone()
    }

    pub fn gammatone_params(&self) -> Option<GammatoneParams> {
        (self.kind == FrontendKind::Gammatone).then(|| GammatoneParams {
            alpha: self.params[0],
            eta: self.params[1],
            beta: self.params[2],
            f: self.params[3],
        })
    }

    /// Mutates the free parameters, then clamps gammatone parameters and
    /// rebuilds the taps.
    pub fn update<F: FnOnce(&mut [f64])>(&mut self, f: F) -> Result<(), FrontendError> {
        f(&mut self.params);
        self.resync()
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn resync(&mut self) -> Result<(), FrontendError> {
        if let Some(mut g) = self.gammatone_params() {
            g.clamp();
            self.params.copy_from_slice(&g.to_array());
        }
        let taps = materialize(self.kind, self.len, &self.params)?;
        self.taps = FirCoefficients::new(taps).map_err(|_| FrontendError::NonFinite)?;
        Ok(())
    }

    /// Chains a gradient on the materialized taps back to the free
    /// parameters.
    pub fn param_grad(&self, tap_grad: &[f64]) -> Vec<f64> {
        let len = self.len;
        debug_assert_eq!(tap_grad.len(), len);
        match self.kind {
            FrontendKind::Free | FrontendKind::ZeroPhase => tap_grad.to_vec(),
            FrontendKind::TypeI | FrontendKind::TypeII => (0..self.params.len())
                .map(|i| {
                    let j = len - 1 - i;
                    if i == j {
                        tap_grad[i]
                    } else {
                        tap_grad[i] + tap_grad[j]
                    }
                })
                .collect(),
            FrontendKind::TypeIII | FrontendKind::TypeIV => (0..self.params.len())
                .map(|i| tap_grad[i] - tap_grad[len - 1 - i])
                .collect(),
            FrontendKind::Gammatone => {
                let partials = self.gammatone_params().unwrap().tap_partials(len);
                partials
                    .iter()
                    .map(|d| d.iter().zip(tap_grad).map(|(a, b)| a * b).sum())
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type_i_mirrors_half() {
        let h = materialize(FrontendKind::TypeI, 5, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(h, vec![1.0, 2.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn type_ii_mirrors_half() {
        let h = materialize(FrontendKind::TypeII, 4, &[1.0, 2.0]).unwrap();
        assert_eq!(h, vec![1.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn type_iii_forces_zero_center() {
        let h = materialize(FrontendKind::TypeIII, 5, &[1.0, 2.0]).unwrap();
        assert_eq!(h, vec![1.0, 2.0, 0.0, -2.0, -1.0]);
    }

    #[test]
    fn type_iv_antimirrors() {
        let h = materialize(FrontendKind::TypeIV, 4, &[1.5, -0.5]).unwrap();
        assert_eq!(h, vec![1.5, -0.5, 0.5, -1.5]);
    }

    #[test]
    fn parity_violations() {
        for (kind, len) in [
            (FrontendKind::TypeI, 4),
            (FrontendKind::TypeII, 5),
            (FrontendKind::TypeIII, 60),
            (FrontendKind::TypeIV, 61),
            (FrontendKind::TypeIII, 1),
        ] {
            assert_eq!(
                materialize(kind, len, &vec![0.0; kind.param_count(len)]),
                Err(FrontendError::Parity { kind, len })
            );
        }
        assert!(matches!(
            materialize(FrontendKind::TypeI, 5, &[1.0]),
            Err(FrontendError::ParamCount {
                expected: 3,
                got: 1
            })
        ));
    }

    #[test]
    fn gammatone_matches_direct_evaluation() {
        // alpha = 1, eta = 1, beta ~ 0, f = 1/4: g(n) = cos(pi (n + 1) / 2)
        let p = GammatoneParams::new(1.0, 1.0, 1e-9, 0.25).unwrap();
        let g = p.kernel(4);
        let expected = [0.0, -1.0, 0.0, 1.0];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-7, "{g:?}");
        }
    }

    #[test]
    fn gammatone_alpha_partial_is_g_over_alpha() {
        let p = GammatoneParams::new(2.0, 4.0, 0.03, 0.1).unwrap();
        let g = p.kernel(20);
        let d = p.tap_partials(20);
        for n in 0..20 {
            assert!((d[0][n] - g[n] / 2.0).abs() <= 1e-12 * g[n].abs().max(1.0));
        }
    }

    #[test]
    fn gammatone_validation_and_clamp() {
        assert!(GammatoneParams::new(0.0, 4.0, 0.03, 0.1).is_err());
        assert!(GammatoneParams::new(1.0, 0.5, 0.03, 0.1).is_err());
        assert!(GammatoneParams::new(1.0, 4.0, 0.0, 0.1).is_err());
        assert!(GammatoneParams::new(1.0, 4.0, 0.03, 0.5).is_err());
        let mut p = GammatoneParams {
            alpha: -1.0,
            eta: 0.2,
            beta: -3.0,
            f: 0.9,
        };
        p.clamp();
        assert_eq!(p.alpha, GammatoneParams::MIN_ALPHA);
        assert_eq!(p.eta, GammatoneParams::MIN_ETA);
        assert_eq!(p.beta, GammatoneParams::MIN_BETA);
        assert_eq!(p.f, GammatoneParams::MAX_F);
    }

    #[test]
    fn projection_round_trip() {
        let taps = [0.25, 0.75, -0.5, 0.5, 1.25];
        let k = FrontendKernel::from_taps(FrontendKind::TypeI, &taps).unwrap();
        assert_eq!(k.params(), &[0.75, 0.625, -0.5]);
        let k = FrontendKernel::from_taps(FrontendKind::TypeIII, &taps).unwrap();
        assert_eq!(k.params(), &[-0.5, 0.125]);
        assert_eq!(k.taps().taps(), &[-0.5, 0.125, 0.0, -0.125, 0.5]);
    }

    #[test]
    fn update_resyncs_taps() {
        let mut k = FrontendKernel::new(FrontendKind::TypeII, 4, vec![1.0, 2.0]).unwrap();
        k.update(|p| p[1] = 5.0).unwrap();
        assert_eq!(k.taps().taps(), &[1.0, 5.0, 5.0, 1.0]);

        let mut g =
            FrontendKernel::gammatone(GammatoneParams::new(1.0, 2.0, 0.01, 0.2).unwrap(), 8)
                .unwrap();
        g.update(|p| p[3] = 0.75).unwrap();
        assert_eq!(g.params()[3], GammatoneParams::MAX_F);
        assert_eq!(g.taps().taps()[0], g.gammatone_params().unwrap().tap(0));
    }

    #[test]
    fn kind_names_parse() {
        for kind in FrontendKind::ALL {
            assert_eq!(kind.name().parse::<FrontendKind>().unwrap(), kind);
        }
        assert_eq!(
            "Type3".parse::<FrontendKind>().unwrap(),
            FrontendKind::TypeIII
        );
        assert!("sinc".parse::<FrontendKind>().is_err());
    }
}
