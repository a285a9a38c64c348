//! One function per command. Stages talk to each other only through files in the run directory.

use std::ops::Range;
use std::path::PathBuf;

use log::info;
use qshws_core::analysis::{
    correlation_report, export_report, fit_astigmatic_phase, fit_spherical_phase, ModelParams, ReportArtifacts,
};
use qshws_core::cpd::{aperture_cpds, gradient_fields_from_cpds, ApertureMap, GradientField};
use qshws_core::estimator::{estimate, select_frames, JpdEstimate, JpdRows, LineRepaired, SinglesTerm};
use qshws_core::model::{saddle_coefficient, AstigmaticState, DoubleGaussianState};
use qshws_core::optics::{
    focal_plane_jpd_separable, read_frames_file, sample_frames_from, write_frames_file, FocalPlaneOptions,
    MicrolensArray, PairSampler, SensorModel,
};
use qshws_core::reconstruct::{assemble_wavefunction, interpolate_gradients, reconstruct_phase, PhaseField};
use qshws_core::tensor::{read_tensor_file, write_tensor_file, ComplexField4, Field2, GridSpec, RealField4, Tensor};

use crate::config::{RunConfig, SourceState};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Stage {
    Simulate,
    EstimateJpd,
    Cpd,
    Gradients,
    Reconstruct,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Simulate, Stage::EstimateJpd, Stage::Cpd, Stage::Gradients, Stage::Reconstruct, Stage::Analyze];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::EstimateJpd => "estimate-jpd",
            Stage::Cpd => "cpd",
            Stage::Gradients => "gradients",
            Stage::Reconstruct => "reconstruct",
            Stage::Analyze => "analyze",
        }
    }

    fn manifest_file(self) -> String {
        format!("{}.manifest", self.name())
    }
}

/// Kept pixel columns and rows of the full sensor.
type PixelWindow = (Range<usize>, Range<usize>);

pub const FRAMES: &str = "frames.qshf";
const CONFIG_FILE: &str = "config.effective";

/// Shared state of one command invocation.
pub struct Context {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    /// Cap from `QSHWS_THREADS`.
    pub threads: Option<usize>,
    config_text: String,
}

impl Context {
    pub fn new(cfg: RunConfig, dir: PathBuf, threads: Option<usize>) -> Self {
        // The run directory's own location stays out of its contents so runs can be moved and compared.
        let config_text =
            cfg.render().lines().filter(|l| !l.starts_with("run.output_dir ")).map(|l| format!("{l}\n")).collect();
        Self { cfg, dir, threads, config_text }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Path of an upstream artifact, or an error naming it and its producer.
    fn input(&self, name: &str, producer: Stage) -> CliResult<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::missing(&p, producer.name()))
        }
    }

    fn read(&self, name: &str, producer: Stage) -> CliResult<Tensor> {
        let p = self.input(name, producer)?;
        read_tensor_file(&p).map_err(|e| CliError::new("format", format!("{}: {e}", p.display())))
    }

    fn read_real(&self, name: &str, producer: Stage) -> CliResult<RealField4> {
        Ok(self.read(name, producer)?.into_real()?)
    }

    fn write(&self, name: &str, t: impl Into<Tensor>) -> CliResult<PathBuf> {
        let p = self.path(name);
        write_tensor_file(&t.into(), &p).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    fn manifest(&self, stage: Stage) -> CliResult<Manifest> {
        let cfg_path = self.path(CONFIG_FILE);
        std::fs::write(&cfg_path, &self.config_text).map_err(|e| CliError::io(&cfg_path, e))?;
        let mut m = Manifest::new(stage.name(), &self.config_text);
        m.set("seed", self.cfg.run.seed);
        Ok(m)
    }

    /// Hashes the outputs and upstream manifests, then writes the stage manifest.
    fn finish(&self, stage: Stage, mut m: Manifest, outputs: &[PathBuf], upstream: &[Stage]) -> CliResult<()> {
        for s in upstream {
            let p = self.path(&s.manifest_file());
            if p.is_file() {
                m.record("upstream", &self.dir, &p)?;
            }
        }
        for p in outputs {
            m.record("output", &self.dir, p)?;
        }
        m.write(&self.path(&stage.manifest_file()))?;
        info!("{} done: {} outputs", stage.name(), outputs.len());
        Ok(())
    }

    fn upstream_manifest(&self, stage: Stage) -> CliResult<(Manifest, PathBuf)> {
        let p = self.input(&stage.manifest_file(), stage)?;
        Ok((Manifest::read(&p)?, p))
    }

    /// Lens array and sensor of the analysed window.
    fn analysed_optics(&self) -> CliResult<(MicrolensArray, SensorModel, Option<PixelWindow>)> {
        let mla = self.cfg.microlens_array();
        let sensor = self.cfg.sensor_model();
        match self.cfg.roi.window_lenses {
            0 => Ok((mla, sensor, None)),
            w => {
                let win = sensor.lens_window(&mla, w, w)?;
                Ok((win.mla, win.sensor, Some((win.xs, win.ys))))
            }
        }
    }

    fn aperture_map(&self) -> CliResult<ApertureMap> {
        let (mla, sensor, _) = self.analysed_optics()?;
        Ok(ApertureMap::new(mla, sensor.pixel_grid()?)?)
    }

    fn model_params(&self) -> ModelParams {
        ModelParams {
            sigma_plus: self.cfg.source.sigma_plus_m,
            sigma_minus: self.cfg.source.sigma_minus_m,
            k: self.cfg.microlens_array().k(),
        }
    }

    pub fn run(&self, stage: Stage) -> CliResult<()> {
        info!("running {}", stage.name());
        match stage {
            Stage::Simulate => self.simulate(),
            Stage::EstimateJpd => self.estimate_jpd(),
            Stage::Cpd => self.cpd(),
            Stage::Gradients => self.gradients(),
            Stage::Reconstruct => self.reconstruct(),
            Stage::Analyze => self.analyze(),
        }
    }

    fn simulate(&self) -> CliResult<()> {
        let cfg = &self.cfg;
        let src = &cfg.source;
        let mla = cfg.microlens_array();
        let sensor = cfg.sensor_model();
        let s = src.samples_per_lens;
        let line_x = GridSpec::line(mla.n_lenses_x * s, mla.pitch / s as f64)?;
        let line_y = GridSpec::line(mla.n_lenses_y * s, mla.pitch / s as f64)?;
        let (psi_x, psi_y) = match src.state {
            SourceState::Entangled => {
                let st = DoubleGaussianState::new(src.sigma_plus_m, src.sigma_minus_m, src.z_m, mla.k())?;
                (st.axis_field(&line_x, &line_x)?, st.axis_field(&line_y, &line_y)?)
            }
            SourceState::Saddle => {
                let base = DoubleGaussianState::new(src.sigma_plus_m, src.sigma_minus_m, src.z_m, mla.k())?;
                let a = saddle_coefficient(mla.k(), src.saddle_distance_m, src.saddle_focal_m);
                let st = AstigmaticState::from_saddle(&base, a, src.saddle_focal_m)?;
                (st.axis_field_x(&line_x, &line_x)?, st.axis_field_y(&line_y, &line_y)?)
            }
        };
        let opts = FocalPlaneOptions { oversample: cfg.simulate.oversample };
        let jpd = focal_plane_jpd_separable(&psi_x, &psi_y, &mla, &sensor, &opts)?;
        let sampler = PairSampler::from_separable(&jpd)?;
        let (stack, _) = sample_frames_from(
            &sampler,
            &sensor,
            cfg.simulate.n_frames,
            cfg.simulate.pairs_per_frame,
            cfg.run.seed,
            false,
        )?;

        let frames = self.path(FRAMES);
        write_frames_file(&stack, &frames).map_err(|e| CliError::io(&frames, e))?;
        let outputs = vec![
            frames,
            self.write("truth_psi_x.qsht", psi_x)?,
            self.write("truth_psi_y.qsht", psi_y)?,
            self.write("truth_jpd_x.qsht", jpd.x().clone())?,
            self.write("truth_jpd_y.qsht", jpd.y().clone())?,
        ];
        let mut m = self.manifest(Stage::Simulate)?;
        m.set("frames_seed", stack.seed());
        m.set("n_frames", stack.n_frames());
        m.set("sensor_width", stack.width());
        m.set("sensor_height", stack.height());
        m.set("total_counts", stack.total_counts());
        self.finish(Stage::Simulate, m, &outputs, &[])
    }

    fn estimate_jpd(&self) -> CliResult<()> {
        let cfg = &self.cfg;
        let frames = self.input(FRAMES, Stage::Simulate)?;
        let mut m = self.manifest(Stage::EstimateJpd)?;
        m.record("input", &self.dir, &frames)?;
        let mut stack =
            read_frames_file(&frames).map_err(|e| CliError::new("format", format!("{}: {e}", frames.display())))?;
        if cfg.estimator.rotate_180 {
            stack = stack.rotate_180();
        }
        let (_, sensor, window) = self.analysed_optics()?;
        if let Some((xs, ys)) = window {
            m.set("window_pixels_x", format!("{}..{}", xs.start, xs.end));
            m.set("window_pixels_y", format!("{}..{}", ys.start, ys.end));
            stack = stack.crop(xs, ys)?;
        }
        let est_cfg = cfg.estimator_config();
        let range = if cfg.estimator.select_frames {
            let sel = select_frames(&stack, &est_cfg)?;
            m.set("selection_diagnostics", sel.diagnostics.len());
            sel.range
        } else {
            0..stack.n_frames()
        };
        m.set("frames_selected", format!("{}..{}", range.start, range.end));
        let (est, bins) = estimate(&stack, range, est_cfg.formula)?;
        let est = est.with_pixel_pitch(sensor.pixel_pitch)?;
        m.set("formula", est_cfg.formula);
        m.set("frames_used", est.frames_used());
        if let Some(b) = &bins {
            m.set("n_low", b.counts[0]);
            m.set("n_middle", b.counts[1]);
            m.set("n_high", b.counts[2]);
            m.set("n_discarded", b.discarded);
        }
        let grid = *est.products().pixel_grid();
        let terms = est.terms();
        m.set("singles_terms", terms.len());
        for (n, t) in terms.iter().enumerate() {
            // Debug formatting of f64 round-trips exactly.
            m.set(format!("term.{n}.frames"), format!("{:?}", t.frames));
        }
        let cols = terms.len().max(1);
        let mut singles = vec![0.0; grid.len() * cols];
        for (n, t) in terms.iter().enumerate() {
            for (p, &v) in t.sums.iter().enumerate() {
                singles[p * cols + n] = v;
            }
        }
        let singles = RealField4::new(grid, GridSpec::line(cols, 1.0)?, singles)?;
        let outputs =
            vec![self.write("jpd_products.qsht", est.products().clone())?, self.write("jpd_singles.qsht", singles)?];
        self.finish(Stage::EstimateJpd, m, &outputs, &[Stage::Simulate])
    }

    fn load_estimate(&self, m: &mut Manifest) -> CliResult<JpdEstimate> {
        let (up, up_path) = self.upstream_manifest(Stage::EstimateJpd)?;
        let products = self.read("jpd_products.qsht", Stage::EstimateJpd)?.into_sparse()?;
        let singles = self.read_real("jpd_singles.qsht", Stage::EstimateJpd)?;
        for name in ["jpd_products.qsht", "jpd_singles.qsht"] {
            m.record("input", &self.dir, &self.path(name))?;
        }
        let n_terms: usize = up.require("singles_terms", &up_path)?;
        let cols = singles.grid2().len();
        if singles.grid1() != products.pixel_grid() || cols != n_terms.max(1) {
            return Err(CliError::new("format", "jpd_singles.qsht does not match jpd_products.qsht and its manifest"));
        }
        let terms = (0..n_terms)
            .map(|n| {
                Ok(SinglesTerm {
                    sums: (0..singles.grid1().len()).map(|p| singles.at(p, n)).collect(),
                    frames: up.require(&format!("term.{n}.frames"), &up_path)?,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(JpdEstimate::from_parts(products, terms, up.require("frames_used", &up_path)?)?)
    }

    fn cpd(&self) -> CliResult<()> {
        let cfg = &self.cfg;
        let mut m = self.manifest(Stage::Cpd)?;
        let est = self.load_estimate(&mut m)?;
        let map = self.aperture_map()?;
        if *est.products().pixel_grid() != *map.pixel_grid() {
            return Err(CliError::config(
                "stored JPD grid does not match the configured sensor window; re-run estimate-jpd",
            ));
        }
        let seg = cfg.cpd.segment_size;
        cfg.cpd.validate()?;
        let conditioned = |j: &JpdEstimate| -> CliResult<(RealField4, usize)> {
            let rows: &dyn JpdRows = j;
            Ok(if cfg.estimator.line_repair {
                aperture_cpds(&LineRepaired { inner: rows, range: cfg.estimator.line_repair_range }, &map, seg)?
            } else {
                aperture_cpds(rows, &map, seg)?
            })
        };
        let (given1, mut ties) = conditioned(&est)?;
        let mut outputs = vec![self.write("cpd_given1.qsht", given1)?];
        let stale = self.path("cpd_given2.qsht");
        if cfg.cpd.exchange_symmetric {
            if stale.exists() {
                std::fs::remove_file(&stale).map_err(|e| CliError::io(&stale, e))?;
            }
        } else {
            let t = JpdEstimate::from_parts(est.products().transpose(), est.terms().to_vec(), est.frames_used())?;
            let (given2, t2) = conditioned(&t)?;
            ties += t2;
            outputs.push(self.write("cpd_given2.qsht", given2)?);
        }
        m.set("segment_size", seg);
        m.set("tie_breaks", ties);
        m.set("line_repair", cfg.estimator.line_repair);
        self.finish(Stage::Cpd, m, &outputs, &[Stage::EstimateJpd])
    }

    fn gradients(&self) -> CliResult<()> {
        let cfg = &self.cfg;
        let mut m = self.manifest(Stage::Gradients)?;
        let given1 = self.read_real("cpd_given1.qsht", Stage::Cpd)?;
        m.record("input", &self.dir, &self.path("cpd_given1.qsht"))?;
        let given2 = if cfg.cpd.exchange_symmetric {
            None
        } else {
            let g = self.read_real("cpd_given2.qsht", Stage::Cpd)?;
            m.record("input", &self.dir, &self.path("cpd_given2.qsht"))?;
            Some(g)
        };
        let map = self.aperture_map()?;
        let (g, report) = gradient_fields_from_cpds(&given1, given2.as_ref(), &map, &cfg.cpd)?;
        m.set("segment_size", report.segment_size);
        m.set("clipped_windows", report.clipped_windows);
        m.set("invalid_pairs", report.invalid_pairs);
        let valid =
            RealField4::new(*g.weight.grid1(), *g.weight.grid2(), g.valid.iter().map(|&v| v as u8 as f64).collect())?;
        let outputs = vec![
            self.write("grad_k1x.qsht", g.k1x)?,
            self.write("grad_k1y.qsht", g.k1y)?,
            self.write("grad_k2x.qsht", g.k2x)?,
            self.write("grad_k2y.qsht", g.k2y)?,
            self.write("grad_weight.qsht", g.weight)?,
            self.write("grad_valid.qsht", valid)?,
        ];
        self.finish(Stage::Gradients, m, &outputs, &[Stage::Cpd])
    }

    fn reconstruct(&self) -> CliResult<()> {
        let cfg = &self.cfg;
        let mut m = self.manifest(Stage::Reconstruct)?;
        let names =
            ["grad_k1x.qsht", "grad_k1y.qsht", "grad_k2x.qsht", "grad_k2y.qsht", "grad_weight.qsht", "grad_valid.qsht"];
        let mut f = Vec::with_capacity(names.len());
        for name in names {
            f.push(self.read_real(name, Stage::Gradients)?);
            m.record("input", &self.dir, &self.path(name))?;
        }
        let valid_f = f.pop().expect("six tensors");
        let weight = f.pop().expect("six tensors");
        let [k1x, k1y, k2x, k2y]: [RealField4; 4] = f.try_into().expect("four gradient tensors");
        let valid = valid_f.data().iter().map(|&v| v != 0.0).collect();
        let mut g = GradientField::new([k1x, k1y], [k2x, k2y], weight, valid)?;
        if cfg.reconstruct.crop_lenses > 0 {
            let c = cfg.reconstruct.crop_lenses;
            g = g.crop_centered(c, c).map_err(|e| CliError::config(format!("reconstruct.crop_lenses: {e}")))?;
        }
        let rc = cfg.reconstruction_config(self.threads);
        rc.validate()?;
        let fine = interpolate_gradients(&g, rc.interpolation_factor)?;
        drop(g);
        let (phase, report) = reconstruct_phase(&fine, &rc)?;
        m.set("n_workers", rc.n_workers);
        m.set("interpolation_factor", rc.interpolation_factor);
        m.set("repetitions", report.repetitions);
        m.set("unreached", report.unreached);
        m.set("path_noise_rms_rad", format!("{:.6e}", report.path_noise_rms));
        m.set("diagnostics", report.diagnostics.len());
        let mut w = fine.weight;
        for (v, &c) in w.data_mut().iter_mut().zip(&phase.calculated) {
            if !c {
                *v = 0.0;
            }
        }
        let psi = assemble_wavefunction(&phase, &w)?;
        let PhaseField { phase, calculated, anchor } = phase;
        m.set("anchor", anchor);
        let mask =
            RealField4::new(*phase.grid1(), *phase.grid2(), calculated.iter().map(|&c| c as u8 as f64).collect())?;
        let outputs =
            vec![self.write("phase.qsht", phase)?, self.write("phase_mask.qsht", mask)?, self.write("psi.qsht", psi)?];
        self.finish(Stage::Reconstruct, m, &outputs, &[Stage::Gradients])
    }

    fn analyze(&self) -> CliResult<()> {
        let cfg = &self.cfg;
        let mut m = self.manifest(Stage::Analyze)?;
        let phase = self.read_real("phase.qsht", Stage::Reconstruct)?;
        let mask = self.read_real("phase_mask.qsht", Stage::Reconstruct)?;
        let psi: ComplexField4 = self.read("psi.qsht", Stage::Reconstruct)?.into_complex()?;
        for name in ["phase.qsht", "phase_mask.qsht", "psi.qsht"] {
            m.record("input", &self.dir, &self.path(name))?;
        }
        let g = *phase.grid2();
        let g1 = *phase.grid1();
        let p1 = g1.index(g1.nx / 2, g1.ny / 2);
        let n = g.len();
        let cond_phase = Field2::new(g, phase.row(p1).to_vec())?;
        let cond_weight: Vec<f64> =
            (0..n).map(|p| if mask.at(p1, p) != 0.0 { psi.at(p1, p).norm_sqr() } else { 0.0 }).collect();
        let cond_amp = Field2::new(g, cond_weight.iter().map(|w| w.sqrt()).collect())?;
        let cond_weight = Field2::new(g, cond_weight)?;

        let k = cfg.microlens_array().k();
        let params = self.model_params();
        let mut art = ReportArtifacts::default();
        match fit_spherical_phase(&cond_phase, &cond_weight, k, cfg.analysis.fit_threshold) {
            Ok(fit) => art.fits.push(("reconstructed".into(), fit)),
            Err(e) => m.set("fit_error", CliError::from(e).message),
        }
        if cfg.source.state == SourceState::Saddle {
            match fit_astigmatic_phase(&cond_phase, &cond_weight, k, cfg.analysis.fit_threshold) {
                Ok(fit) => {
                    m.set("astigmatic.curvature_x", format!("{:.6e}", fit.curvature[0]));
                    m.set("astigmatic.curvature_y", format!("{:.6e}", fit.curvature[1]));
                    m.set("astigmatic.r_squared", format!("{:.6}", fit.r_squared));
                }
                Err(e) => m.set("astigmatic_fit_error", CliError::from(e).message),
            }
        }
        art.correlations
            .push(("reconstructed".into(), correlation_report(&psi.modulus_squared(), Some(&psi), Some(&params))?));
        // Source-plane x factor of the simulated state, when this run simulated it.
        let truth = self.path("truth_psi_x.qsht");
        if truth.is_file() {
            let t = self.read("truth_psi_x.qsht", Stage::Simulate)?.into_complex()?;
            m.record("input", &self.dir, &truth)?;
            art.correlations
                .push(("truth_x".into(), correlation_report(&t.modulus_squared(), Some(&t), Some(&params))?));
        }
        art.matrices.push(("conditional_phase".into(), cond_phase));
        art.matrices.push(("conditional_amplitude".into(), cond_amp));
        let report_dir = self.path("report");
        let outputs = export_report(&art, &report_dir)?;
        self.finish(Stage::Analyze, m, &outputs, &[Stage::Reconstruct, Stage::Simulate])
    }
}

/// Stages from `from` to `to` inclusive, in pipeline order.
pub fn stage_range(from: Stage, to: Stage) -> CliResult<Vec<Stage>> {
    if from > to {
        return Err(CliError::new(
            "usage",
            format!("--stage-from {} comes after --stage-to {}", from.name(), to.name()),
        ));
    }
    Ok(Stage::ALL.iter().copied().filter(|s| (from..=to).contains(s)).collect())
}
