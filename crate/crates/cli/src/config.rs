//! Run configuration: flat `section.key = value` lines, `#` comments.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use qshws_core::cpd::CpdConfig;
use qshws_core::estimator::{EstimatorConfig, Formula};
use qshws_core::optics::{Drift, FocalPlaneOptions, MicrolensArray, SensorModel};
use qshws_core::reconstruct::ReconstructionConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceState {
    /// Double-Gaussian state propagated by `source.z_m`.
    Entangled,
    /// Source-plane state carrying a saddle phase from a cylindrical-lens pair.
    Saddle,
}

impl FromStr for SourceState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "entangled" => Ok(SourceState::Entangled),
            "saddle" => Ok(SourceState::Saddle),
            other => Err(format!("unknown state {other:?} (entangled, saddle)")),
        }
    }
}

impl fmt::Display for SourceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceState::Entangled => "entangled",
            SourceState::Saddle => "saddle",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub seed: u64,
    pub output_dir: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSection {
    pub state: SourceState,
    pub sigma_plus_m: f64,
    pub sigma_minus_m: f64,
    pub z_m: f64,
    pub saddle_distance_m: f64,
    pub saddle_focal_m: f64,
    /// Line-field samples per lens pitch.
    pub samples_per_lens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlaSection {
    pub pitch_m: f64,
    pub aperture_width_m: f64,
    pub focal_length_m: f64,
    pub n_lenses_x: usize,
    pub n_lenses_y: usize,
    pub wavelength_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSection {
    pub pixel_pitch_m: f64,
    pub threshold_rate: f64,
    pub dark_count_prob: f64,
    pub drift_amplitude: f64,
    pub drift_period_frames: f64,
    pub line_correlation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSection {
    pub n_frames: usize,
    pub pairs_per_frame: f64,
    pub oversample: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSection {
    pub formula: Formula,
    pub brightness_window: f64,
    pub select_frames: bool,
    pub rotate_180: bool,
    pub line_repair: bool,
    pub line_repair_range: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiSection {
    /// Centered lens window analysed downstream; 0 keeps the whole array.
    pub window_lenses: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructSection {
    pub n_repetitions: usize,
    pub n_workers: usize,
    pub spread_probability_floor: f64,
    pub interpolation_factor: usize,
    pub symmetrize: bool,
    /// Centered aperture window kept before interpolation; 0 keeps all.
    pub crop_lenses: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSection {
    pub fit_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run: RunSection,
    pub source: SourceSection,
    pub mla: MlaSection,
    pub sensor: SensorSection,
    pub simulate: SimulateSection,
    pub estimator: EstimatorSection,
    pub roi: RoiSection,
    pub cpd: CpdConfig,
    pub reconstruct: ReconstructSection,
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mla = MicrolensArray::default();
        let sensor = SensorModel::default();
        let est = EstimatorConfig::default();
        let rec = ReconstructionConfig::default();
        Self {
            run: RunSection { seed: 0, output_dir: "run".into() },
            source: SourceSection {
                state: SourceState::Entangled,
                sigma_plus_m: 13.43e-6,
                sigma_minus_m: 1.143e-3,
                z_m: 0.07,
                saddle_distance_m: 0.07,
                saddle_focal_m: 0.2,
                samples_per_lens: 16,
            },
            mla: MlaSection {
                pitch_m: mla.pitch,
                aperture_width_m: mla.aperture_width,
                focal_length_m: mla.focal_length,
                n_lenses_x: mla.n_lenses_x,
                n_lenses_y: mla.n_lenses_y,
                wavelength_m: mla.wavelength,
            },
            sensor: SensorSection {
                pixel_pitch_m: sensor.pixel_pitch,
                threshold_rate: sensor.threshold_rate,
                dark_count_prob: sensor.dark_count_prob,
                drift_amplitude: 0.0,
                drift_period_frames: 20_000.0,
                line_correlation: sensor.line_correlation,
            },
            simulate: SimulateSection {
                n_frames: 100_000,
                pairs_per_frame: 2.0,
                oversample: FocalPlaneOptions::default().oversample,
            },
            estimator: EstimatorSection {
                formula: est.formula,
                brightness_window: est.brightness_window,
                select_frames: true,
                rotate_180: false,
                line_repair: false,
                line_repair_range: est.line_repair_range,
            },
            roi: RoiSection { window_lenses: 6 },
            cpd: CpdConfig::default(),
            reconstruct: ReconstructSection {
                n_repetitions: rec.n_repetitions,
                n_workers: rec.n_workers,
                spread_probability_floor: rec.spread_probability_floor,
                interpolation_factor: 10,
                symmetrize: rec.symmetrize,
                crop_lenses: 0,
            },
            analysis: AnalysisSection { fit_threshold: 0.1 },
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, type_name: &str) -> Result<T, String> {
    value.parse::<T>().map_err(|_| format!("{key}: expected {type_name}, got {value:?}"))
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+ : $ty:ty),* $(,)?) => {
        /// Every accepted key, in file order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $($key => self.$($field).+ = parse_value::<$ty>(key, value, stringify!($ty))?,)*
                    _ => return Err(format!("unknown key {key:?}")),
                }
                Ok(())
            }

            /// Canonical text of the full configuration, one key per line.
            pub fn render(&self) -> String {
                let mut s = String::new();
                $(
                    s.push_str($key);
                    s.push_str(" = ");
                    s.push_str(&self.$($field).+.to_string());
                    s.push('\n');
                )*
                s
            }
        }
    };
}

config_keys! {
    "run.seed" => run.seed: u64,
    "run.output_dir" => run.output_dir: String,
    "source.state" => source.state: SourceState,
    "source.sigma_plus_m" => source.sigma_plus_m: f64,
    "source.sigma_minus_m" => source.sigma_minus_m: f64,
    "source.z_m" => source.z_m: f64,
    "source.saddle_distance_m" => source.saddle_distance_m: f64,
    "source.saddle_focal_m" => source.saddle_focal_m: f64,
    "source.samples_per_lens" => source.samples_per_lens: usize,
    "mla.pitch_m" => mla.pitch_m: f64,
    "mla.aperture_width_m" => mla.aperture_width_m: f64,
    "mla.focal_length_m" => mla.focal_length_m: f64,
    "mla.n_lenses_x" => mla.n_lenses_x: usize,
    "mla.n_lenses_y" => mla.n_lenses_y: usize,
    "mla.wavelength_m" => mla.wavelength_m: f64,
    "sensor.pixel_pitch_m" => sensor.pixel_pitch_m: f64,
    "sensor.threshold_rate" => sensor.threshold_rate: f64,
    "sensor.dark_count_prob" => sensor.dark_count_prob: f64,
    "sensor.drift_amplitude" => sensor.drift_amplitude: f64,
    "sensor.drift_period_frames" => sensor.drift_period_frames: f64,
    "sensor.line_correlation" => sensor.line_correlation: f64,
    "simulate.n_frames" => simulate.n_frames: usize,
    "simulate.pairs_per_frame" => simulate.pairs_per_frame: f64,
    "simulate.oversample" => simulate.oversample: usize,
    "estimator.formula" => estimator.formula: Formula,
    "estimator.brightness_window" => estimator.brightness_window: f64,
    "estimator.select_frames" => estimator.select_frames: bool,
    "estimator.rotate_180" => estimator.rotate_180: bool,
    "estimator.line_repair" => estimator.line_repair: bool,
    "estimator.line_repair_range" => estimator.line_repair_range: usize,
    "roi.window_lenses" => roi.window_lenses: usize,
    "cpd.segment_size" => cpd.segment_size: usize,
    "cpd.exchange_symmetric" => cpd.exchange_symmetric: bool,
    "cpd.min_relative_weight" => cpd.min_relative_weight: f64,
    "reconstruct.n_repetitions" => reconstruct.n_repetitions: usize,
    "reconstruct.n_workers" => reconstruct.n_workers: usize,
    "reconstruct.spread_probability_floor" => reconstruct.spread_probability_floor: f64,
    "reconstruct.interpolation_factor" => reconstruct.interpolation_factor: usize,
    "reconstruct.symmetrize" => reconstruct.symmetrize: bool,
    "reconstruct.crop_lenses" => reconstruct.crop_lenses: usize,
    "analysis.fit_threshold" => analysis.fit_threshold: f64,
}

impl RunConfig {
    /// Parses config text over the defaults. Unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| CliError::config(format!("line {}: {msg}", n + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) && KEYS.contains(&key) {
                return Err(at(format!("duplicate key {key:?}")));
            }
            cfg.set(key, value).map_err(at)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn microlens_array(&self) -> MicrolensArray {
        MicrolensArray {
            pitch: self.mla.pitch_m,
            aperture_width: self.mla.aperture_width_m,
            focal_length: self.mla.focal_length_m,
            n_lenses_x: self.mla.n_lenses_x,
            n_lenses_y: self.mla.n_lenses_y,
            wavelength: self.mla.wavelength_m,
        }
    }

    pub fn sensor_model(&self) -> SensorModel {
        let s = &self.sensor;
        SensorModel {
            threshold_rate: s.threshold_rate,
            dark_count_prob: s.dark_count_prob,
            drift: Drift { amplitude: s.drift_amplitude, period_frames: s.drift_period_frames },
            line_correlation: s.line_correlation,
            ..SensorModel::covering(&self.microlens_array(), s.pixel_pitch_m)
        }
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            formula: self.estimator.formula,
            brightness_window: self.estimator.brightness_window,
            line_repair_range: self.estimator.line_repair_range,
        }
    }

    /// Reconstruction settings with the worker count capped by `thread_cap`.
    pub fn reconstruction_config(&self, thread_cap: Option<usize>) -> ReconstructionConfig {
        let r = &self.reconstruct;
        ReconstructionConfig {
            n_repetitions: r.n_repetitions,
            n_workers: thread_cap.map_or(r.n_workers, |c| r.n_workers.min(c)),
            spread_probability_floor: r.spread_probability_floor,
            rng_seed: self.run.seed,
            interpolation_factor: r.interpolation_factor,
            symmetrize: r.symmetrize,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(&self.run.output_dir)
    }

    /// Checks everything a stage could trip over later, naming the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::config(format!("{key} must be positive, got {v}")))
            }
        };
        positive("source.sigma_plus_m", self.source.sigma_plus_m)?;
        positive("source.sigma_minus_m", self.source.sigma_minus_m)?;
        positive("source.saddle_focal_m", self.source.saddle_focal_m)?;
        positive("simulate.pairs_per_frame", self.simulate.pairs_per_frame)?;
        if !self.source.z_m.is_finite() || !self.source.saddle_distance_m.is_finite() {
            return Err(CliError::config("source distances must be finite"));
        }
        if self.source.samples_per_lens < 2 {
            return Err(CliError::config("source.samples_per_lens must be ≥ 2"));
        }
        if self.simulate.n_frames == 0 {
            return Err(CliError::config("simulate.n_frames must be ≥ 1"));
        }
        if self.simulate.oversample == 0 {
            return Err(CliError::config("simulate.oversample must be ≥ 1"));
        }
        if !(self.analysis.fit_threshold >= 0.0 && self.analysis.fit_threshold < 1.0) {
            return Err(CliError::config("analysis.fit_threshold must lie in [0, 1)"));
        }
        if !(self.estimator.brightness_window > 0.0) {
            return Err(CliError::config("estimator.brightness_window must be positive"));
        }
        let mla = self.microlens_array();
        mla.validate()?;
        let sensor = self.sensor_model();
        sensor.validate()?;
        let w = self.roi.window_lenses;
        if w > 0 {
            sensor.lens_window(&mla, w, w).map_err(|e| CliError::config(format!("roi.window_lenses: {e}")))?;
        }
        self.cpd.validate()?;
        self.reconstruction_config(None).validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.source.z_m = 0.04;
        cfg.estimator.formula = Formula::Successive;
        assert_eq!(RunConfig::parse(&cfg.render()).unwrap(), cfg);
        assert_eq!(cfg.render().lines().count(), KEYS.len());
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let cfg = RunConfig::parse("# header\n\nmla.pitch_m = 3.0e-4  # paper value\n").unwrap();
        assert_eq!(cfg.mla.pitch_m, 3.0e-4);
    }

    #[test]
    fn rejects_unknown_duplicate_and_mistyped_keys() {
        let e = RunConfig::parse("mla.pich_m = 1").unwrap_err();
        assert!(e.to_string().contains("unknown key \"mla.pich_m\""), "{e}");
        let e = RunConfig::parse("run.seed = 1\nrun.seed = 2").unwrap_err();
        assert!(e.to_string().contains("line 2: duplicate key"), "{e}");
        let e = RunConfig::parse("simulate.n_frames = many").unwrap_err();
        assert!(e.to_string().contains("expected usize"), "{e}");
        assert!(RunConfig::parse("just words").is_err());
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn zero_frames_is_rejected() {
        let e = RunConfig::parse("simulate.n_frames = 0").unwrap().validate().unwrap_err();
        assert!(e.to_string().contains("n_frames must be ≥ 1"), "{e}");
    }

    #[test]
    fn odd_window_on_even_array_is_rejected() {
        let e = RunConfig::parse("roi.window_lenses = 5").unwrap().validate().unwrap_err();
        assert!(e.to_string().contains("roi.window_lenses"), "{e}");
    }

    #[test]
    fn thread_cap_limits_workers() {
        assert_eq!(RunConfig::default().reconstruction_config(Some(3)).n_workers, 3);
        assert_eq!(RunConfig::default().reconstruction_config(Some(64)).n_workers, 10);
    }
}
