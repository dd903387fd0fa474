//! Seeded synthetic datasets of acoustically distinct sound families.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::dataset::{DatasetManifest, ManifestEntry, Split};
use crate::signal::wav::encode_wav_f32;
use crate::signal::{AudioClip, SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    PureTone,
    AmTone,
    Chirp,
    NoiseBurst,
    HarmonicStack,
}

impl GeneratorKind {
    pub fn is_tonal(self) -> bool {
        !matches!(self, GeneratorKind::NoiseBurst)
    }
}

fn default_amplitude() -> [f64; 2] {
    [0.3, 0.9]
}

fn default_modulation() -> [f64; 2] {
    [3.0, 12.0]
}

fn default_harmonics() -> usize {
    6
}

/// One family of clips. `freq_hz` is the fundamental range for tonal kinds
/// and the band-centre range for noise bursts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub name: String,
    pub kind: GeneratorKind,
    pub freq_hz: [f64; 2],
    #[serde(default = "default_amplitude")]
    pub amplitude: [f64; 2],
    #[serde(default = "default_modulation")]
    pub modulation_hz: [f64; 2],
    #[serde(default = "default_harmonics")]
    pub harmonics: usize,
}

impl FamilySpec {
    pub fn new(name: &str, kind: GeneratorKind, lo: f64, hi: f64) -> Self {
        FamilySpec {
            name: name.into(),
            kind,
            freq_hz: [lo, hi],
            amplitude: default_amplitude(),
            modulation_hz: default_modulation(),
            harmonics: default_harmonics(),
        }
    }
}

fn default_valid_fraction() -> f64 {
    0.2
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub families: Vec<FamilySpec>,
    pub clips_per_family: usize,
    pub clip_seconds: f64,
    pub seed: u64,
    /// Permit overlapping frequency ranges between families.
    #[serde(default)]
    pub allow_overlap: bool,
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

impl SynthSpec {
    /// Four families of one-second clips: a pure tone, a harmonic stack, a
    /// chirp and band-limited noise bursts, 200 clips each.
    pub fn four_family(seed: u64) -> Self {
        SynthSpec {
            families: vec![
                FamilySpec::new("tone", GeneratorKind::PureTone, 200.0, 300.0),
                FamilySpec::new("stack", GeneratorKind::HarmonicStack, 110.0, 180.0),
                FamilySpec::new("chirp", GeneratorKind::Chirp, 600.0, 1500.0),
                FamilySpec::new("noise", GeneratorKind::NoiseBurst, 2500.0, 4000.0),
            ],
            clips_per_family: 200,
            clip_seconds: 1.0,
            seed,
            allow_overlap: false,
            valid_fraction: 0.2,
            test_fraction: 0.2,
        }
    }

    /// Two tonal and two noise families, for routing-cluster experiments.
    pub fn two_superfamilies(seed: u64, clips_per_family: usize) -> Self {
        SynthSpec {
            families: vec![
                FamilySpec::new("tone", GeneratorKind::PureTone, 200.0, 350.0),
                FamilySpec::new("am", GeneratorKind::AmTone, 400.0, 600.0),
                FamilySpec::new("noise-mid", GeneratorKind::NoiseBurst, 1500.0, 2500.0),
                FamilySpec::new("noise-high", GeneratorKind::NoiseBurst, 4000.0, 6000.0),
            ],
            clips_per_family,
            clip_seconds: 1.0,
            seed,
            allow_overlap: false,
            valid_fraction: 0.2,
            test_fraction: 0.2,
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.clip_seconds * SAMPLE_RATE as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::validation("families", "at least one family required"));
        }
        if self.clips_per_family == 0 {
            return Err(Error::validation("clips_per_family", "must be at least 1"));
        }
        if !(self.clip_seconds > 0.0) || self.n_samples() == 0 {
            return Err(Error::validation("clip_seconds", "must be positive"));
        }
        for (name, v) in [
            ("valid_fraction", self.valid_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::validation(name, "must be in [0, 1)"));
            }
        }
        let (_, _, n_train) = self.split_counts();
        if n_train == 0 {
            return Err(Error::validation("valid_fraction", "leaves no training clips"));
        }
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        for (i, f) in self.families.iter().enumerate() {
            let field = |s: &str| format!("families[{i}].{s}");
            if f.name.is_empty() || self.families[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::validation(field("name"), "names must be nonempty and unique"));
            }
            let [lo, hi] = f.freq_hz;
            if !(lo > 0.0 && lo <= hi && hi < nyquist) {
                return Err(Error::validation(
                    field("freq_hz"),
                    format!("need 0 < lo <= hi < {nyquist}"),
                ));
            }
            let [alo, ahi] = f.amplitude;
            if !(alo > 0.0 && alo <= ahi && ahi <= 1.0) {
                return Err(Error::validation(field("amplitude"), "need 0 < lo <= hi <= 1"));
            }
            let [mlo, mhi] = f.modulation_hz;
            if !(mlo >= 0.0 && mlo <= mhi) {
                return Err(Error::validation(field("modulation_hz"), "need 0 <= lo <= hi"));
            }
            if f.harmonics == 0 {
                return Err(Error::validation(field("harmonics"), "must be at least 1"));
            }
            if !self.allow_overlap {
                for g in &self.families[..i] {
                    if lo <= g.freq_hz[1] && g.freq_hz[0] <= hi {
                        return Err(Error::validation(
                            field("freq_hz"),
                            format!("overlaps family `{}` (set allow_overlap to permit)", g.name),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// `(valid, test, train)` clip counts per family.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.clips_per_family;
        let v = (n as f64 * self.valid_fraction).round() as usize;
        let t = (n as f64 * self.test_fraction).round() as usize;
        (v, t, n.saturating_sub(v + t))
    }

    pub fn split_of(&self, index: usize) -> Split {
        let (_, t, train) = self.split_counts();
        if index < train {
            Split::Train
        } else if index < train + t {
            Split::Test
        } else {
            Split::Valid
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub family: usize,
    pub index: usize,
    pub split: Split,
    pub clip: AudioClip,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn clip_rng(seed: u64, family: usize, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(((family as u64) << 32) | index as u64)))
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

fn normalize_peak(x: &mut [f64], amplitude: f64) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= amplitude / peak);
    }
}

fn render(family: &FamilySpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let amp = uniform(rng, family.amplitude);
    let f0 = uniform(rng, family.freq_hz);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let mut x: Vec<f64> = match family.kind {
        GeneratorKind::PureTone => (0..n).map(|i| (2.0 * PI * f0 * i as f64 / sr + phase).sin()).collect(),
        GeneratorKind::AmTone => {
            let fm = uniform(rng, family.modulation_hz);
            let depth = rng.gen_range(0.5..=1.0);
            let mphase = rng.gen_range(0.0..2.0 * PI);
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    let env = 1.0 - depth / 2.0 + depth / 2.0 * (2.0 * PI * fm * t + mphase).sin();
                    env * (2.0 * PI * f0 * t + phase).sin()
                })
                .collect()
        }
        GeneratorKind::Chirp => {
            let f1 = uniform(rng, family.freq_hz);
            let dur = n as f64 / sr;
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    (2.0 * PI * (f0 * t + (f1 - f0) * t * t / (2.0 * dur)) + phase).sin()
                })
                .collect()
        }
        GeneratorKind::HarmonicStack => {
            let phases: Vec<f64> = (0..family.harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    phases
                        .iter()
                        .enumerate()
                        .map(|(h, &p)| (h + 1, p))
                        .filter(|&(h, _)| h as f64 * f0 < sr / 2.0)
                        .map(|(h, p)| (2.0 * PI * h as f64 * f0 * t + p).sin() / h as f64)
                        .sum()
                })
                .collect()
        }
        GeneratorKind::NoiseBurst => {
            let theta = 2.0 * PI * f0 / sr;
            let r = (-PI * (f0 / 3.0) / sr).exp();
            let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
            let (mut y1, mut y2) = (0.0, 0.0);
            let mut noise: Vec<f64> = (0..n)
                .map(|_| {
                    let y = rng.gen_range(-1.0..1.0) + a1 * y1 + a2 * y2;
                    y2 = y1;
                    y1 = y;
                    y
                })
                .collect();
            let mut env = vec![0.0f64; n];
            let bursts = rng.gen_range(2..=5);
            for _ in 0..bursts {
                let start = rng.gen_range(0..n);
                let len = (rng.gen_range(0.05..0.25) * sr) as usize;
                let attack = 0.005 * sr;
                for (k, e) in env.iter_mut().skip(start).take(len).enumerate() {
                    let k = k as f64;
                    *e += (k / attack).min(1.0) * (-3.0 * k / len as f64).exp();
                }
            }
            for (v, e) in noise.iter_mut().zip(&env) {
                *v *= e.min(1.0);
            }
            noise
        }
    };
    normalize_peak(&mut x, amp);
    x
}

/// Render every clip of `spec` in memory, family by family.
pub fn synthesize(spec: &SynthSpec) -> Result<Vec<SynthClip>> {
    spec.validate()?;
    let n = spec.n_samples();
    let mut out = Vec::with_capacity(spec.families.len() * spec.clips_per_family);
    for (fi, family) in spec.families.iter().enumerate() {
        for ci in 0..spec.clips_per_family {
            let mut rng = clip_rng(spec.seed, fi, ci);
            let samples = render(family, n, &mut rng).into_iter().map(|v| v as f32).collect();
            out.push(SynthClip {
                family: fi,
                index: ci,
                split: spec.split_of(ci),
                clip: AudioClip {
                    samples,
                    sample_rate: SAMPLE_RATE,
                    source_id: format!("{}-{:04}", family.name, ci),
                },
            });
        }
    }
    Ok(out)
}

/// Where [`generate_synthetic`] put its manifests.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl SynthOutput {
    pub fn manifest(&self, split: Split) -> Option<&Path> {
        match split {
            Split::Train => Some(&self.train),
            Split::Valid => self.valid.as_deref(),
            Split::Test => self.test.as_deref(),
        }
    }
}

/// Write every clip as a 32-bit float WAV under `out_dir/clips/` and one
/// manifest per nonempty split (`train.json`, `valid.json`, `test.json`).
pub fn generate_synthetic(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<SynthOutput> {
    let out_dir = out_dir.as_ref();
    let clips = synthesize(spec)?;
    let classes: Vec<String> = spec.families.iter().map(|f| f.name.clone()).collect();
    let mut manifests = [Split::Train, Split::Valid, Split::Test].map(|split| DatasetManifest {
        classes: classes.clone(),
        entries: Vec::new(),
        split,
    });
    for c in &clips {
        let family = &spec.families[c.family].name;
        let rel = PathBuf::from("clips")
            .join(family)
            .join(format!("{}.wav", c.clip.source_id));
        let path = out_dir.join(&rel);
        let dir = path.parent().expect("clip path has a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(&path, encode_wav_f32(&c.clip.samples, SAMPLE_RATE)).map_err(|e| Error::io(&path, e))?;
        let m = manifests
            .iter_mut()
            .find(|m| m.split == c.split)
            .expect("all splits present");
        m.entries.push(ManifestEntry {
            path: rel,
            labels: vec![family.clone()],
        });
    }
    let mut paths = manifests.iter().map(|m| -> Result<Option<PathBuf>> {
        if m.entries.is_empty() {
            return Ok(None);
        }
        let p = out_dir.join(format!("{}.json", m.split.name()));
        m.save(&p)?;
        Ok(Some(p))
    });
    let train = paths.next().unwrap()?.expect("validated: train split nonempty");
    let valid = paths.next().unwrap()?;
    let test = paths.next().unwrap()?;
    Ok(SynthOutput { train, valid, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            families: vec![
                FamilySpec::new("pure", GeneratorKind::PureTone, 200.0, 300.0),
                FamilySpec::new("noise", GeneratorKind::NoiseBurst, 3000.0, 4000.0),
            ],
            clips_per_family: 3,
            clip_seconds: 0.25,
            seed: 7,
            allow_overlap: false,
            valid_fraction: 0.0,
            test_fraction: 0.0,
        }
    }

    /// Brute-force DFT peak frequency.
    fn dft_peak_hz(x: &[f32]) -> f64 {
        let n = x.len();
        let mut best = (0, 0.0);
        for k in 1..n / 2 {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                re += v as f64 * ang.cos();
                im += v as f64 * ang.sin();
            }
            if re * re + im * im > best.1 {
                best = (k, re * re + im * im);
            }
        }
        best.0 as f64 * SAMPLE_RATE as f64 / n as f64
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(synthesize(&small()).unwrap(), synthesize(&small()).unwrap());
        let mut other = small();
        other.seed = 8;
        assert_ne!(synthesize(&small()).unwrap(), synthesize(&other).unwrap());
    }

    #[test]
    fn written_files_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic(&small(), a.path()).unwrap();
        generate_synthetic(&small(), b.path()).unwrap();
        for entry in walk(a.path()) {
            let rel = entry.strip_prefix(a.path()).unwrap();
            assert_eq!(
                std::fs::read(&entry).unwrap(),
                std::fs::read(b.path().join(rel)).unwrap()
            );
        }
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn pure_tone_peak_within_range() {
        let mut spec = small();
        spec.clips_per_family = 6;
        for c in synthesize(&spec).unwrap().iter().filter(|c| c.family == 0) {
            let peak = dft_peak_hz(&c.clip.samples);
            // 4 Hz bins at 0.25 s
            assert!((196.0..=304.0).contains(&peak), "peak {peak}");
        }
    }

    #[test]
    fn amplitudes_bounded() {
        for c in synthesize(&SynthSpec::two_superfamilies(3, 2)).unwrap() {
            assert!(c.clip.samples.iter().all(|v| v.abs() <= 1.0));
            assert_eq!(c.clip.samples.len(), 16000);
        }
    }

    #[test]
    fn zero_clips_rejected() {
        let mut spec = small();
        spec.clips_per_family = 0;
        assert!(matches!(spec.validate(), Err(Error::Validation { field, .. }) if field == "clips_per_family"));
    }

    #[test]
    fn overlapping_ranges_rejected_unless_allowed() {
        let mut spec = small();
        spec.families[1].freq_hz = [250.0, 500.0];
        assert!(spec.validate().is_err());
        spec.allow_overlap = true;
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn splits_partition_each_family() {
        let spec = SynthSpec::four_family(1);
        assert_eq!(spec.split_counts(), (40, 40, 120));
        let counts = (0..200).fold([0; 3], |mut acc, i| {
            acc[spec.split_of(i) as usize] += 1;
            acc
        });
        assert_eq!(counts, [120, 40, 40]);
    }
}
