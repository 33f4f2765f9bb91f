use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::prefill::{collect_maps, setup, Runtime};
use crate::analysis::{stability_report, StabilityReport};
use crate::error::Result;
use crate::importance::{write_maps_csv, ImportanceMap};
use crate::model::ArchitectureSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisRun {
    pub name: String,
    pub maps: Vec<ImportanceMap<Runtime>>,
    pub stability: StabilityReport,
}

impl AnalysisRun {
    /// Writes `{name}_tau.csv`, `{name}_density.csv` and `{name}_scores.csv`; returns the paths.
    pub fn write_csvs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let path = |suffix: &str| dir.join(format!("{}_{suffix}.csv", self.name));
        let (tau, density, scores) = (path("tau"), path("density"), path("scores"));
        self.stability
            .write_tau_csv(BufWriter::new(File::create(&tau)?))?;
        self.stability
            .write_density_csv(BufWriter::new(File::create(&density)?))?;
        write_maps_csv(&self.maps, BufWriter::new(File::create(&scores)?))?;
        Ok(vec![tau, density, scores])
    }
}

fn analyse(cfg: &RunConfig, name: String, arch: ArchitectureSpec) -> Result<AnalysisRun> {
    let s = setup(cfg, arch)?;
    let maps = collect_maps(&s)?;
    let stability = stability_report(&maps)?;
    Ok(AnalysisRun {
        name,
        maps,
        stability,
    })
}

/// Importance maps and stability metrics on an unreduced forward pass, for the
/// configured architecture and then the comparison preset, on the same prompt.
///
/// Any pattern or schedule in `cfg` is ignored.
pub fn run_analysis(cfg: &RunConfig) -> Result<Vec<AnalysisRun>> {
    cfg.validate()?;
    let mut runs = vec![analyse(cfg, cfg.arch_name(), cfg.architecture()?)?];
    if let Some(name) = &cfg.analysis.compare_preset {
        if *name != cfg.arch_name() {
            let mut arch = ArchitectureSpec::preset(name)?;
            if let Some(d) = cfg.dims {
                arch = arch.with_dims(d)?;
            }
            runs.push(analyse(cfg, name.clone(), arch)?);
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerKind;

    #[test]
    fn hybrid_and_transformer_side_by_side() {
        let cfg = RunConfig::from_json(r#"{"preset":"tiny8","visual_tokens":64,"text_tokens":8}"#)
            .unwrap();
        let runs = run_analysis(&cfg).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].name, "tiny8");
        // tiny8 scores at its 5 attention and Mamba layers
        assert_eq!(runs[0].stability.taus.len(), 4);
        assert_eq!(runs[1].name, "transformer-only-4");
        let attn = ArchitectureSpec::preset("transformer-only-4").unwrap();
        for t in &runs[1].stability.taus {
            assert_eq!(attn.layer_kinds[t.from_layer], LayerKind::Attention);
            assert_eq!(attn.layer_kinds[t.to_layer], LayerKind::Attention);
        }
        for d in runs.iter().flat_map(|r| &r.stability.densities) {
            assert!(d.density > 0.0 && d.density <= 1.0);
        }
    }

    #[test]
    fn csvs_are_written() {
        let mut cfg =
            RunConfig::from_json(r#"{"preset":"tiny8","visual_tokens":32,"text_tokens":4}"#)
                .unwrap();
        cfg.analysis.compare_preset = None;
        let dir = tempfile::tempdir().unwrap();
        let runs = run_analysis(&cfg).unwrap();
        let paths = runs[0].write_csvs(dir.path()).unwrap();
        let tau = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(tau.starts_with("layer_pair,tau\n0-1,"));
    }
}
