//! Offline cohort building from recorded client fixtures.

use std::io::Write;
use std::path::Path;

use anyhow::Context;

use pdprobe_core::datasets::clients::{
    read_jsonl, FixtureEntities, FixtureLive, FixtureNer, FixturePageStats, FixtureSuggestions,
};
use pdprobe_core::datasets::{
    build_famous, collect_synthetic, synth_names, write_manifest, BuildMeta, FamousConfig,
    FamousReport, NamePod, SubjectRecord, SyntheticConfig,
};

pub struct FamousInputs<'a> {
    pub entities: &'a Path,
    pub page_stats: &'a Path,
    pub live: &'a Path,
}

pub fn famous_from_fixtures(
    inputs: &FamousInputs,
    properties: &[String],
    config: &FamousConfig,
) -> anyhow::Result<FamousReport> {
    let entities = FixtureEntities::load(inputs.entities).context("loading entity dump")?;
    let stats = FixturePageStats::load(inputs.page_stats).context("loading page statistics")?;
    let live = FixtureLive::load(inputs.live).context("loading live values")?;
    Ok(build_famous(&entities, &stats, &live, properties, config))
}

pub struct SyntheticInputs<'a> {
    pub pods: &'a Path,
    pub suggestions: &'a Path,
    /// Names the recognizer rejects, one per line.
    pub rejected_names: Option<&'a Path>,
}

pub fn synthetic_from_fixtures(
    inputs: &SyntheticInputs,
    config: &SyntheticConfig,
) -> anyhow::Result<Vec<SubjectRecord>> {
    let pods: Vec<NamePod> = read_jsonl(inputs.pods).context("loading name pods")?;
    let search =
        FixtureSuggestions::load(inputs.suggestions, false).context("loading suggestions")?;
    let mut ner = FixtureNer::default();
    if let Some(p) = inputs.rejected_names {
        let text =
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        ner.rejected = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
    }
    let candidates = synth_names(&pods, config.candidates, config.seed, config.outlier_floor)?;
    Ok(collect_synthetic(&candidates, &search, &ner, config))
}

pub fn write_cohort(records: &[SubjectRecord], meta: &BuildMeta, out: &Path) -> anyhow::Result<()> {
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = std::io::BufWriter::new(file);
    write_manifest(records, meta, &mut w)?;
    w.flush()?;
    Ok(())
}
