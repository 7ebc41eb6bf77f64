//! Fourier domain adaptation.
//!
//! A source image keeps its phase and high-frequency amplitude while the
//! centered low-frequency block of its amplitude spectrum is taken from a
//! reference image. The inverse transform of the result carries the
//! reference's global appearance (illumination, stain tint) on top of the
//! source's structure.
//!
//! Spectra are stored centered: the zero-frequency bin sits at
//! `(height / 2, width / 2)` (integer division), as with `fftshift`.

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{Image8, RasterImage, RealImage, Sample};

/// Relative imaginary residue tolerated when inverting a spectrum that came
/// straight out of [`forward_spectrum`].
pub const IMAGINARY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdaConfig {
    /// Fractional size of the swapped window along each axis, in `[0, 1]`.
    pub beta: f64,
    /// Round and clamp the output to 8 bits.
    pub quantize: bool,
}

impl Default for FdaConfig {
    fn default() -> Self {
        Self {
            beta: 0.01,
            quantize: true,
        }
    }
}

impl FdaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid("beta", format!("{} is outside [0, 1]", self.beta)));
        }
        Ok(())
    }
}

/// Per-channel centered complex spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    width: usize,
    height: usize,
    channels: Vec<Vec<Complex64>>,
    /// Set only for spectra produced by [`forward_spectrum`]; those must
    /// invert to a real grid.
    hermitian: bool,
}

impl Spectrum {
    /// Builds a spectrum from centered per-channel bins. The result is not
    /// assumed to be conjugate-symmetric.
    pub fn from_channels(width: usize, height: usize, channels: Vec<Vec<Complex64>>) -> Result<Self> {
        if width == 0 || height == 0 || channels.is_empty() {
            return Err(Error::invalid(
                "spectrum size",
                format!("{width}x{height} with {} channels", channels.len()),
            ));
        }
        if let Some(bad) = channels.iter().find(|c| c.len() != width * height) {
            return Err(Error::mismatch(
                format!("channel length {}", bad.len()),
                format!("{width}x{height}"),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            hermitian: false,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        &self.channels[c]
    }

    /// Index of the zero-frequency bin as `(row, col)`.
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    #[inline]
    pub fn bin(&self, c: usize, row: usize, col: usize) -> Complex64 {
        self.channels[c][row * self.width + col]
    }

    pub fn amplitude(&self, c: usize) -> Vec<f64> {
        self.channels[c].iter().map(|z| z.norm()).collect()
    }

    pub fn phase(&self, c: usize) -> Vec<f64> {
        self.channels[c].iter().map(|z| z.arg()).collect()
    }

    /// Recombines `amplitude · e^{i·phase}` per channel.
    pub fn from_polar(width: usize, height: usize, amplitude: &[Vec<f64>], phase: &[Vec<f64>]) -> Result<Self> {
        if amplitude.len() != phase.len() {
            return Err(Error::mismatch(
                format!("{} amplitude channels", amplitude.len()),
                format!("{} phase channels", phase.len()),
            ));
        }
        let channels = amplitude
            .iter()
            .zip(phase)
            .map(|(a, p)| {
                if a.len() != p.len() {
                    return Err(Error::mismatch(
                        format!("amplitude length {}", a.len()),
                        format!("phase length {}", p.len()),
                    ));
                }
                Ok(a.iter().zip(p).map(|(&r, &t)| Complex64::from_polar(r, t)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_channels(width, height, channels)
    }

    fn shape(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels.len())
    }
}

/// Centered window `(row0, col0, h, w)` swapped for a given `beta`.
pub fn low_frequency_window(width: usize, height: usize, beta: f64) -> (usize, usize, usize, usize) {
    let h = ((beta * height as f64).round() as usize).min(height);
    let w = ((beta * width as f64).round() as usize).min(width);
    (height / 2 - h / 2, width / 2 - w / 2, h, w)
}

fn fft_2d(width: usize, height: usize, buf: &mut [Complex64], direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(width, direction);
    let col_fft = planner.plan_fft(height, direction);
    let mut scratch =
        vec![Complex64::default(); row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len())];
    for row in buf.chunks_exact_mut(width) {
        row_fft.process_with_scratch(row, &mut scratch);
    }
    let mut column = vec![Complex64::default(); height];
    for x in 0..width {
        for (y, v) in column.iter_mut().enumerate() {
            *v = buf[y * width + x];
        }
        col_fft.process_with_scratch(&mut column, &mut scratch);
        for (y, v) in column.iter().enumerate() {
            buf[y * width + x] = *v;
        }
    }
}

/// Moves bin `(r, c)` to `((r + h/2) % h, (c + w/2) % w)`.
fn fftshift(width: usize, height: usize, buf: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); buf.len()];
    for r in 0..height {
        let rr = (r + height / 2) % height;
        for c in 0..width {
            out[rr * width + (c + width / 2) % width] = buf[r * width + c];
        }
    }
    out
}

fn ifftshift(width: usize, height: usize, buf: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); buf.len()];
    for r in 0..height {
        let rr = (r + height / 2) % height;
        for c in 0..width {
            out[r * width + c] = buf[rr * width + (c + width / 2) % width];
        }
    }
    out
}

/// Unnormalized 2D DFT of every channel, centered.
pub fn forward_spectrum<T>(img: &RasterImage<T>) -> Result<Spectrum>
where
    T: Sample + Into<f64>,
{
    let (w, h) = (img.width(), img.height());
    let channels = (0..img.channels())
        .map(|c| {
            let mut buf: Vec<Complex64> = img
                .channel_plane(c)
                .into_iter()
                .map(|v| Complex64::new(v.into(), 0.0))
                .collect();
            fft_2d(w, h, &mut buf, FftDirection::Forward);
            fftshift(w, h, &buf)
        })
        .collect();
    let mut spec = Spectrum::from_channels(w, h, channels)?;
    spec.hermitian = true;
    Ok(spec)
}

/// Real part of the normalized inverse DFT.
///
/// For spectra fresh from [`forward_spectrum`] the imaginary residue is
/// checked against [`IMAGINARY_TOLERANCE`] (relative to the largest real
/// magnitude); for any other spectrum it is discarded.
pub fn inverse_spectrum(spec: &Spectrum) -> Result<RealImage> {
    let (w, h) = (spec.width, spec.height);
    let scale = 1.0 / (w * h) as f64;
    let mut planes = Vec::with_capacity(spec.channels.len());
    let mut max_re = 0f64;
    let mut max_im = 0f64;
    for channel in &spec.channels {
        let mut buf = ifftshift(w, h, channel);
        fft_2d(w, h, &mut buf, FftDirection::Inverse);
        let plane: Vec<f64> = buf
            .iter()
            .map(|z| {
                max_re = max_re.max(z.re.abs() * scale);
                max_im = max_im.max(z.im.abs() * scale);
                z.re * scale
            })
            .collect();
        planes.push(plane);
    }
    if spec.hermitian && max_im > IMAGINARY_TOLERANCE * max_re.max(f64::MIN_POSITIVE) {
        return Err(Error::ImaginaryResidue {
            residue: max_im / max_re.max(f64::MIN_POSITIVE),
        });
    }
    RealImage::from_planes(w, h, &planes)
}

/// Replaces the amplitude inside the centered low-frequency window with the
/// reference amplitude; phase stays the source phase everywhere.
///
/// Bins whose amplitudes already agree are copied unchanged, so the set of
/// altered bins is always contained in the window.
pub fn swap_low_frequency(source: &Spectrum, reference: &Spectrum, cfg: &FdaConfig) -> Result<Spectrum> {
    cfg.validate()?;
    if source.width != reference.width
        || source.height != reference.height
        || source.channels.len() != reference.channels.len()
    {
        return Err(Error::mismatch(
            format!("source {}", source.shape()),
            format!("reference {}", reference.shape()),
        ));
    }
    let w = source.width;
    let (row0, col0, wh, ww) = low_frequency_window(w, source.height, cfg.beta);
    let mut out = source.clone();
    out.hermitian = false;
    for (dst, refc) in out.channels.iter_mut().zip(&reference.channels) {
        for r in row0..row0 + wh {
            for c in col0..col0 + ww {
                let i = r * w + c;
                let amp = refc[i].norm();
                if amp != dst[i].norm() {
                    dst[i] = Complex64::from_polar(amp, dst[i].arg());
                }
            }
        }
    }
    Ok(out)
}

/// Output of [`fda_transfer`], depending on [`FdaConfig::quantize`].
#[derive(Debug, Clone, PartialEq)]
pub enum FdaImage {
    Quantized(Image8),
    Real(RealImage),
}

impl FdaImage {
    pub fn into_u8(self) -> Image8 {
        match self {
            FdaImage::Quantized(img) => img,
            FdaImage::Real(img) => img.from_real(),
        }
    }

    pub fn into_real(self) -> RealImage {
        match self {
            FdaImage::Quantized(img) => img.to_real(),
            FdaImage::Real(img) => img,
        }
    }
}

/// Forward transform both images, swap the low band, invert.
pub fn fda_transfer<T>(source: &RasterImage<T>, reference: &RasterImage<T>, cfg: &FdaConfig) -> Result<FdaImage>
where
    T: Sample + Into<f64>,
{
    cfg.validate()?;
    if !source.same_shape(reference) {
        return Err(Error::mismatch(
            format!("source {}", source.shape()),
            format!("reference {}", reference.shape()),
        ));
    }
    let swapped = swap_low_frequency(&forward_spectrum(source)?, &forward_spectrum(reference)?, cfg)?;
    let real = inverse_spectrum(&swapped)?;
    Ok(if cfg.quantize {
        FdaImage::Quantized(real.from_real())
    } else {
        FdaImage::Real(real)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image8::from_fn(w, h, c, |_, _, _| rng.random()).unwrap()
    }

    /// Direct DFT of one plane, centered the same way as `Spectrum`.
    fn naive_dft(w: usize, h: usize, plane: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); w * h];
        for v in 0..h {
            for u in 0..w {
                let mut acc = Complex64::default();
                for y in 0..h {
                    for x in 0..w {
                        let t = -2.0 * PI * ((u * x) as f64 / w as f64 + (v * y) as f64 / h as f64);
                        acc += plane[y * w + x] * Complex64::from_polar(1.0, t);
                    }
                }
                out[((v + h / 2) % h) * w + (u + w / 2) % w] = acc;
            }
        }
        out
    }

    #[test]
    fn constant_image_has_single_dc_bin() {
        let c = 37.0;
        let img = RealImage::filled(8, 8, 1, c).unwrap();
        let spec = forward_spectrum(&img).unwrap();
        let oracle = naive_dft(8, 8, &img.channel_plane(0));
        let (cr, cc) = spec.center();
        assert_eq!((cr, cc), (4, 4));
        for (i, (got, want)) in spec.channel(0).iter().zip(&oracle).enumerate() {
            assert!((got - want).norm() < 1e-9);
            if i == cr * 8 + cc {
                assert!((got.norm() - c * 64.0).abs() < 1e-9);
            } else {
                assert!(got.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn matches_naive_dft_on_odd_sizes() {
        let img = random_image(7, 5, 2, 3);
        let spec = forward_spectrum(&img).unwrap();
        for c in 0..2 {
            let plane: Vec<f64> = img.channel_plane(c).into_iter().map(f64::from).collect();
            let oracle = naive_dft(7, 5, &plane);
            for (got, want) in spec.channel(c).iter().zip(&oracle) {
                assert!((got - want).norm() < 1e-8 * want.norm().max(1.0));
            }
        }
    }

    #[test]
    fn round_trip_random_rgb() {
        let img = random_image(64, 64, 3, 11).to_real();
        let back = inverse_spectrum(&forward_spectrum(&img).unwrap()).unwrap();
        let err = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn all_zero_spectrum_inverts_to_zero() {
        let spec = Spectrum::from_channels(6, 4, vec![vec![Complex64::default(); 24]]).unwrap();
        let img = inverse_spectrum(&spec).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dc_bin_inverts_to_constant() {
        let (w, h, c) = (10usize, 6usize, 12.5);
        let mut bins = vec![Complex64::default(); w * h];
        bins[(h / 2) * w + w / 2] = Complex64::new((w * h) as f64 * c, 0.0);
        let img = inverse_spectrum(&Spectrum::from_channels(w, h, vec![bins]).unwrap()).unwrap();
        assert!(img.data().iter().all(|v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn parseval_holds() {
        let img = random_image(33, 20, 3, 5).to_real();
        let spec = forward_spectrum(&img).unwrap();
        let pixels: f64 = img.data().iter().map(|v| v * v).sum();
        let bins: f64 = (0..3).flat_map(|c| spec.channel(c).iter().map(|z| z.norm_sqr())).sum();
        let rel = (pixels - bins / (33.0 * 20.0)).abs() / pixels;
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn window_geometry() {
        assert_eq!(low_frequency_window(16, 16, 0.1), (7, 7, 2, 2));
        assert_eq!(low_frequency_window(16, 16, 0.0), (8, 8, 0, 0));
        assert_eq!(low_frequency_window(15, 9, 1.0), (0, 0, 9, 15));
        assert_eq!(low_frequency_window(512, 512, 0.01), (254, 254, 5, 5));
    }

    #[test]
    fn beta_zero_and_self_swap_are_identities() {
        let a = forward_spectrum(&random_image(12, 10, 3, 1)).unwrap();
        let b = forward_spectrum(&random_image(12, 10, 3, 2)).unwrap();
        let zero = FdaConfig {
            beta: 0.0,
            ..Default::default()
        };
        assert_eq!(swap_low_frequency(&a, &b, &zero).unwrap().channels, a.channels);
        let half = FdaConfig {
            beta: 0.5,
            ..Default::default()
        };
        assert_eq!(swap_low_frequency(&a, &a, &half).unwrap().channels, a.channels);
    }

    #[test]
    fn beta_one_takes_reference_amplitude_everywhere() {
        let a = forward_spectrum(&random_image(9, 8, 1, 1)).unwrap();
        let b = forward_spectrum(&random_image(9, 8, 1, 2)).unwrap();
        let out = swap_low_frequency(
            &a,
            &b,
            &FdaConfig {
                beta: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        for ((o, s), r) in out.channel(0).iter().zip(a.channel(0)).zip(b.channel(0)) {
            assert!((o.norm() - r.norm()).abs() < 1e-9 * r.norm().max(1.0));
            if s.norm() > 1e-9 {
                assert!((o.arg() - s.arg()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn swap_rejects_bad_inputs() {
        let a = forward_spectrum(&random_image(8, 8, 3, 1)).unwrap();
        let b = forward_spectrum(&random_image(8, 6, 3, 2)).unwrap();
        let err = swap_low_frequency(&a, &b, &FdaConfig::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("8x8x3") && err.contains("8x6x3"), "{err}");
        let bad = FdaConfig {
            beta: 1.5,
            ..Default::default()
        };
        assert!(swap_low_frequency(&a, &a, &bad).is_err());
    }

    #[test]
    fn transfer_constant_dc_swap() {
        let src = Image8::filled(16, 16, 3, 40).unwrap();
        let reference = Image8::filled(16, 16, 3, 200).unwrap();
        let cfg = FdaConfig {
            beta: 0.1,
            quantize: true,
        };
        let out = fda_transfer(&src, &reference, &cfg).unwrap().into_u8();
        assert!(out.data().iter().all(|&v| v == 200));
    }

    #[test]
    fn transfer_beta_zero_is_exact() {
        let src = random_image(20, 14, 3, 8);
        let reference = random_image(20, 14, 3, 9);
        let cfg = FdaConfig {
            beta: 0.0,
            quantize: true,
        };
        assert_eq!(fda_transfer(&src, &reference, &cfg).unwrap().into_u8(), src);
    }

    #[test]
    fn transfer_unquantized_keeps_reals() {
        let src = random_image(8, 8, 1, 8);
        let cfg = FdaConfig {
            beta: 0.5,
            quantize: false,
        };
        match fda_transfer(&src, &random_image(8, 8, 1, 4), &cfg).unwrap() {
            FdaImage::Real(img) => assert_eq!(img.width(), 8),
            FdaImage::Quantized(_) => panic!("expected real output"),
        }
    }

    #[test]
    fn polar_recombination() {
        let spec = forward_spectrum(&random_image(6, 6, 1, 2)).unwrap();
        let back = Spectrum::from_polar(6, 6, &[spec.amplitude(0)], &[spec.phase(0)]).unwrap();
        for (a, b) in spec.channel(0).iter().zip(back.channel(0)) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}
