//! Pipeline stages. Each stage reads its inputs from and writes its outputs to
//! the output directory, so stages can be rerun independently.
//!
//! ```text
//! out/
//!   probe/       prompts.jsonl results.jsonl scores.csv scores_by_domain.csv coordinate.json
//!   steer/       vectors_{axis}.bin layer_report_{axis}.{json,csv}
//!                baseline_results.jsonl baseline_coordinate.json
//!                steered_results_{axis}.jsonl steered_coordinate_{axis}.json entanglement_{axis}.json
//!   analysis/    entanglement_{axis}.{json,csv} distance.{csv,json} heatmap_{axis}.{csv,json}
//!                correlation.json ppl_curve_{axis}.{csv,json,svg} map.svg
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use culturesteer::analysis::{
    axis_correlation, distance, domain_matrix, entanglement, perplexity_curve,
    plot, project, read_json, write_json, PerplexitySettings, PplPoint,
};
use culturesteer::dataset::{
    self, assign_labels, emit_generation_prompt, filter_axis, load_dataset, split, synthetic,
    GenerationConfig,
};
use culturesteer::model::backend::{serve, ProcessBackend};
use culturesteer::model::{load_model, InterventionSpec, LanguageModel, TinyTransformer};
use culturesteer::persona::{build_advanced, build_basic, load_stats, Codebook, PersonaKind, PersonaProfile};
use culturesteer::probing::{
    aggregate, probe_all, render_prompt, rescale, write_results, write_scores_csv, GroupBy, QuestionScore,
};
use culturesteer::steering::{
    build_pairs, check_alpha, extract_vectors, layer_search, steered_probe, LayerSearchReport, SteeringVectorSet,
};
use culturesteer::{CulturalCoordinate, Domain, Error, HumanAnchors, Result, RunConfig, Scenario};
use serde_json::json;

use crate::{Analyze, Global};

fn open_model(cfg: &RunConfig) -> Result<Box<dyn LanguageModel>> {
    match &cfg.backend {
        Some(cmd) if !cmd.is_empty() => {
            let mut c = std::process::Command::new(&cmd[0]);
            c.args(&cmd[1..]);
            Ok(Box::new(ProcessBackend::spawn(c)?))
        }
        _ => Ok(Box::new(load_model(&cfg.model, cfg.weights.as_deref())?)),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require(path: PathBuf, producer: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            path,
            producer: producer.to_string(),
        })
    }
}

pub fn validate(cfg: &RunConfig) -> Result<ExitCode> {
    let ds = load_dataset(&cfg.dataset)?;
    let report = dataset::validate(&ds);
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

pub fn emit_gen_prompt(
    wvs_ids: Vec<String>,
    domains: Vec<Domain>,
    per_combination: Option<usize>,
) -> Result<ExitCode> {
    let mut gc = GenerationConfig::default();
    if !wvs_ids.is_empty() {
        gc.wvs_ids = wvs_ids;
    }
    if !domains.is_empty() {
        gc.domains = domains;
    }
    if let Some(n) = per_combination {
        gc.per_combination = n;
    }
    println!("{}", emit_generation_prompt(&gc)?);
    Ok(ExitCode::SUCCESS)
}

fn resolve_persona(cfg: &RunConfig, kind: PersonaKind) -> Result<Option<PersonaProfile>> {
    let p = &cfg.persona;
    let country = || p.country.clone().unwrap_or_default();
    match kind {
        PersonaKind::None => Ok(None),
        PersonaKind::Basic => build_basic(&country()).map(Some),
        PersonaKind::Advanced => {
            let country = country();
            if country.trim().is_empty() {
                return Err(Error::EmptyCountry);
            }
            let need = |v: &Option<PathBuf>, field: &str| {
                v.clone()
                    .ok_or_else(|| Error::InvalidConfig(format!("advanced persona needs persona.{field}")))
            };
            let codebook = Codebook::load(need(&p.codebook, "codebook")?)?;
            let stats = load_stats(need(&p.stats, "stats")?)?;
            let s = stats
                .iter()
                .find(|s| s.country == country)
                .ok_or_else(|| Error::UnknownCountry(country.clone()))?;
            build_advanced(&country, s, &codebook, &p.names).map(Some)
        }
    }
}

pub fn persona(cfg: &RunConfig, stats: Option<PathBuf>, codebook: Option<PathBuf>) -> Result<ExitCode> {
    let mut cfg = cfg.clone();
    if stats.is_some() {
        cfg.persona.stats = stats;
    }
    if codebook.is_some() {
        cfg.persona.codebook = codebook;
    }
    let kind = match cfg.persona.kind {
        PersonaKind::None => PersonaKind::Basic,
        k => k,
    };
    let p = resolve_persona(&cfg, kind)?.expect("kind is not none");
    println!("{}", p.text);
    Ok(ExitCode::SUCCESS)
}

pub fn fixture(output: &Path) -> Result<ExitCode> {
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let text = serde_json::to_string_pretty(&synthetic::canonical_dataset_json()).expect("json");
    std::fs::write(output, text + "\n").map_err(|e| Error::io(output, e))?;
    log::info!("wrote {} scenarios to {}", dataset::CANONICAL_TOTAL, output.display());
    Ok(ExitCode::SUCCESS)
}

pub fn init_model(cfg: &RunConfig, output: &Path) -> Result<ExitCode> {
    TinyTransformer::init(&cfg.model)?.to_tensor_file().write(output)?;
    log::info!("wrote weights to {}", output.display());
    Ok(ExitCode::SUCCESS)
}

pub fn serve_backend(cfg: &RunConfig) -> Result<ExitCode> {
    let model = load_model(&cfg.model, cfg.weights.as_deref())?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve(&model, stdin.lock(), stdout.lock()).map_err(|e| Error::Backend(e.to_string()))?;
    Ok(ExitCode::SUCCESS)
}

pub struct Context {
    cfg: RunConfig,
    force: bool,
    lenient: bool,
    model: Option<Box<dyn LanguageModel>>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn rescaled(scores: Vec<QuestionScore>, cfg: &RunConfig) -> Result<Vec<QuestionScore>> {
    scores.iter().map(|s| rescale(s, &cfg.ranges)).collect()
}

impl Context {
    pub fn new(cfg: RunConfig, g: &Global) -> Result<Self> {
        Ok(Self {
            cfg,
            force: g.force,
            lenient: g.lenient,
            model: None,
        })
    }

    fn model(&mut self) -> Result<&dyn LanguageModel> {
        if self.model.is_none() {
            self.model = Some(open_model(&self.cfg)?);
        }
        Ok(self.model.as_deref().expect("just loaded"))
    }

    fn dir(&self, stage: &str) -> Result<PathBuf> {
        let d = self.cfg.out_dir.join(stage);
        ensure_dir(&d)?;
        Ok(d)
    }

    fn path(&self, stage: &str, file: &str) -> PathBuf {
        self.cfg.out_dir.join(stage).join(file)
    }

    fn axis_file(&self, stem: &str, ext: &str) -> String {
        format!("{stem}_{}.{ext}", self.cfg.axis)
    }

    fn dataset(&self) -> Result<Vec<Scenario>> {
        let ds = load_dataset(&self.cfg.dataset)?;
        let report = dataset::validate(&ds);
        if !report.passed {
            eprintln!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if !self.lenient {
                return Err(Error::LayoutMismatch(report.failures.len()));
            }
            log::warn!("dataset layout check failed; continuing (--lenient)");
        }
        Ok(ds)
    }

    fn projection_label(&self, persona: Option<&PersonaProfile>) -> String {
        match persona {
            Some(p) => format!("{:?}:{}", p.kind, p.country).to_lowercase(),
            None => "baseline".into(),
        }
    }

    pub fn probe(mut self) -> Result<ExitCode> {
        let ds = self.dataset()?;
        let persona = resolve_persona(&self.cfg, self.cfg.persona.kind)?;
        let labeled = assign_labels(&ds, self.cfg.seed);
        let dir = self.dir("probe")?;

        let mut prompts = String::new();
        for ls in &labeled {
            let p = render_prompt(ls, persona.as_ref());
            log::debug!("prompt {}:\n{p}", ls.scenario.id);
            prompts.push_str(&json!({"scenario_id": ls.scenario.id, "prompt": p}).to_string());
            prompts.push('\n');
        }
        write_text(&dir.join("prompts.jsonl"), &prompts)?;

        let results = probe_all(self.model()?, &labeled, persona.as_ref(), &InterventionSpec::none())?;
        write_results(dir.join("results.jsonl"), &results)?;
        let by_qid = rescaled(aggregate(&results, &ds, GroupBy::Qid)?, &self.cfg)?;
        let by_domain = rescaled(aggregate(&results, &ds, GroupBy::QidDomain)?, &self.cfg)?;
        write_scores_csv(dir.join("scores.csv"), &by_qid)?;
        write_scores_csv(dir.join("scores_by_domain.csv"), &by_domain)?;
        let coord = project(&by_qid, &self.cfg.projection, &self.projection_label(persona.as_ref()))?;
        coord.write_json(dir.join("coordinate.json"))?;
        println!("{}: x = {:.4}, y = {:.4} over {} scenarios", coord.label, coord.x, coord.y, results.len());
        Ok(ExitCode::SUCCESS)
    }

    /// Vectors from the optimization split of the configured axis, then the
    /// per-layer search on the same scenarios.
    pub fn layer_search(&mut self) -> Result<(SteeringVectorSet, LayerSearchReport, dataset::DatasetSplit)> {
        check_alpha(self.cfg.alpha, self.cfg.alpha_cap, self.force)?;
        let axis = self.cfg.axis;
        let ds = self.dataset()?;
        if filter_axis(&ds, axis).is_empty() {
            return Err(Error::EmptyAxis(axis.to_string()));
        }
        let parts = split(&ds, self.cfg.seed, self.cfg.split_ratio)?;
        let opt_axis = filter_axis(&parts.optimization, axis);
        let dir = self.dir("steer")?;
        let (seed, alpha, k, threshold) = (self.cfg.seed, self.cfg.alpha, self.cfg.top_k, self.cfg.threshold);
        let model = self.model()?;
        let vectors = extract_vectors(model, &build_pairs(&opt_axis, axis), axis)?;
        vectors.save(dir.join(format!("vectors_{axis}.bin")))?;
        let probe_set = assign_labels(&opt_axis, seed);
        let report = layer_search(model, &vectors, &probe_set, alpha as f32, k, threshold)?;
        report.write_json(dir.join(format!("layer_report_{axis}.json")))?;
        report.write_csv(dir.join(format!("layer_report_{axis}.csv")))?;
        log::info!(
            "axis {axis}: selected layers {:?} (mean |differential| {:?})",
            report.selected,
            report.selected.iter().map(|l| report.layer_means[l]).collect::<Vec<_>>()
        );
        Ok((vectors, report, parts))
    }

    pub fn steer(mut self) -> Result<ExitCode> {
        let (vectors, report, parts) = self.layer_search()?;
        let axis = self.cfg.axis;
        let dir = self.dir("steer")?;
        let eval = assign_labels(&parts.evaluation, self.cfg.seed);
        let cfg = self.cfg.clone();
        let force = self.force;
        let model = self.model()?;

        let base = probe_all(model, &eval, None, &InterventionSpec::none())?;
        write_results(dir.join("baseline_results.jsonl"), &base)?;
        let base_coord = project(
            &rescaled(aggregate(&base, &parts.evaluation, GroupBy::Qid)?, &cfg)?,
            &cfg.projection,
            "baseline",
        )?;
        base_coord.write_json(dir.join("baseline_coordinate.json"))?;

        let steered = steered_probe(model, &vectors, &report.selected, cfg.alpha, cfg.alpha_cap, force, &eval, None)?;
        write_results(dir.join(format!("steered_results_{axis}.jsonl")), &steered)?;
        let label = format!("{axis}={}", cfg.alpha);
        let st_coord = project(
            &rescaled(aggregate(&steered, &parts.evaluation, GroupBy::Qid)?, &cfg)?,
            &cfg.projection,
            &label,
        )?;
        st_coord.write_json(dir.join(format!("steered_coordinate_{axis}.json")))?;

        match entanglement(&base_coord, &st_coord, axis) {
            Ok(e) => {
                write_json(dir.join(format!("entanglement_{axis}.json")), &e)?;
                println!(
                    "{label}: layers {:?}, shift ({:+.4}, {:+.4}), E = {:.4}",
                    report.selected,
                    st_coord.x - base_coord.x,
                    st_coord.y - base_coord.y,
                    e.e
                );
            }
            Err(Error::ZeroIntendedShift) => {
                log::warn!("steering produced no shift along {axis}; entanglement undefined");
            }
            Err(e) => return Err(e),
        }
        Ok(ExitCode::SUCCESS)
    }

    fn anchors(&self) -> Result<HumanAnchors> {
        let path = self.cfg.anchors.clone().ok_or_else(|| {
            Error::InvalidConfig("no anchors file configured (set `anchors` or pass --anchors)".into())
        })?;
        HumanAnchors::load(path)
    }

    pub fn analyze(mut self, which: Analyze) -> Result<ExitCode> {
        let out = self.dir("analysis")?;
        let axis = self.cfg.axis;
        match which {
            Analyze::Entangle => {
                let base: CulturalCoordinate =
                    read_json(require(self.path("steer", "baseline_coordinate.json"), "steer")?)?;
                let st: CulturalCoordinate = read_json(require(
                    self.path("steer", &self.axis_file("steered_coordinate", "json")),
                    "steer",
                )?)?;
                let e = entanglement(&base, &st, axis)?;
                write_json(out.join(self.axis_file("entanglement", "json")), &e)?;
                write_csv(
                    &out.join(self.axis_file("entanglement", "csv")),
                    &["target_axis", "delta_intended", "delta_unintended", "e"],
                    &[vec![
                        e.target_axis.to_string(),
                        e.delta_intended.to_string(),
                        e.delta_unintended.to_string(),
                        e.e.to_string(),
                    ]],
                )?;
                println!("E = {}", e.e);
            }
            Analyze::Distance => {
                let anchors = self.anchors()?;
                let coord: CulturalCoordinate =
                    read_json(require(self.path("probe", "coordinate.json"), "probe")?)?;
                let mut rows = Vec::new();
                let mut map = BTreeMap::new();
                for (country, p) in &anchors.coords {
                    let d = distance(&coord, &anchors, country)?;
                    map.insert(country.clone(), d);
                    rows.push(vec![
                        country.clone(),
                        coord.label.clone(),
                        coord.x.to_string(),
                        coord.y.to_string(),
                        p.x.to_string(),
                        p.y.to_string(),
                        d.to_string(),
                    ]);
                }
                write_csv(
                    &out.join("distance.csv"),
                    &["country", "label", "x", "y", "anchor_x", "anchor_y", "distance"],
                    &rows,
                )?;
                write_json(out.join("distance.json"), &map)?;
            }
            Analyze::Heatmap => {
                let report = LayerSearchReport::read_json(require(
                    self.path("steer", &self.axis_file("layer_report", "json")),
                    "layer-search",
                )?)?;
                let ds = self.dataset()?;
                let parts = split(&ds, self.cfg.seed, self.cfg.split_ratio)?;
                let (seed, alpha, projection) = (self.cfg.seed, self.cfg.alpha, self.cfg.projection.clone());
                check_alpha(alpha, self.cfg.alpha_cap, self.force)?;
                let model = self.model()?;
                let mut runs = BTreeMap::new();
                let mut probes = BTreeMap::new();
                for d in Domain::ALL {
                    let opt: Vec<Scenario> =
                        parts.optimization.iter().filter(|s| s.domain == d && s.axis == axis).cloned().collect();
                    if opt.is_empty() {
                        return Err(Error::MissingDomain(d.to_string()));
                    }
                    let eval: Vec<Scenario> = parts.evaluation.iter().filter(|s| s.domain == d).cloned().collect();
                    runs.insert(d, extract_vectors(model, &build_pairs(&opt, axis), axis)?);
                    probes.insert(d, assign_labels(&eval, seed));
                }
                let m = domain_matrix(model, &runs, &probes, &report.selected, alpha as f32, axis, &projection)?;
                m.write_csv(out.join(self.axis_file("heatmap", "csv")))?;
                write_json(out.join(self.axis_file("heatmap", "json")), &m)?;
            }
            Analyze::Correlation => {
                let anchors = self.anchors()?;
                let r = axis_correlation(&anchors)?;
                write_json(
                    out.join("correlation.json"),
                    &json!({"r": r, "countries": anchors.coords.keys().collect::<Vec<_>>()}),
                )?;
                println!("r = {r}");
            }
            Analyze::PplCurve => {
                let vectors = SteeringVectorSet::load(require(
                    self.path("steer", &self.axis_file("vectors", "bin")),
                    "layer-search",
                )?)?;
                let report = LayerSearchReport::read_json(require(
                    self.path("steer", &self.axis_file("layer_report", "json")),
                    "layer-search",
                )?)?;
                for &a in &self.cfg.ppl_alphas {
                    check_alpha(a, self.cfg.alpha_cap, self.force)?;
                }
                let ds = self.dataset()?;
                let mut eval = split(&ds, self.cfg.seed, self.cfg.split_ratio)?.evaluation;
                eval.sort_by(|a, b| a.id.cmp(&b.id));
                let prompts: Vec<String> = eval
                    .iter()
                    .take(self.cfg.ppl_prompts)
                    .map(|s| s.scenario_text.clone())
                    .collect();
                let settings = PerplexitySettings {
                    window: self.cfg.ppl_window,
                    temperature: self.cfg.temperature,
                    seed: self.cfg.seed,
                    scoring: self.cfg.ppl_scoring,
                };
                let alphas = self.cfg.ppl_alphas.clone();
                let curve = perplexity_curve(self.model()?, &vectors, &report.selected, &alphas, &prompts, &settings)?;
                write_json(out.join(self.axis_file("ppl_curve", "json")), &curve)?;
                write_csv(
                    &out.join(self.axis_file("ppl_curve", "csv")),
                    &["alpha", "mean_ppl", "n"],
                    &curve
                        .iter()
                        .map(|p| vec![p.alpha.to_string(), p.mean_ppl.to_string(), p.n.to_string()])
                        .collect::<Vec<_>>(),
                )?;
            }
            Analyze::Plot => {
                let base: CulturalCoordinate =
                    read_json(require(self.path("probe", "coordinate.json"), "probe")?)?;
                let mut coords = vec![base];
                let mut arrows = Vec::new();
                let sb = self.path("steer", "baseline_coordinate.json");
                let ss = self.path("steer", &self.axis_file("steered_coordinate", "json"));
                if sb.exists() && ss.exists() {
                    let mut b: CulturalCoordinate = read_json(&sb)?;
                    b.label = "baseline (eval)".into();
                    coords.push(b);
                    coords.push(read_json(&ss)?);
                    arrows.push((1, 2));
                }
                let anchors = match &self.cfg.anchors {
                    Some(_) => Some(self.anchors()?),
                    None => None,
                };
                write_text(&out.join("map.svg"), &plot::scatter_svg(&coords, anchors.as_ref(), &arrows))?;
                let curve_path = out.join(self.axis_file("ppl_curve", "json"));
                if curve_path.exists() {
                    let curve: Vec<PplPoint> = read_json(&curve_path)?;
                    write_text(
                        &out.join(self.axis_file("ppl_curve", "svg")),
                        &plot::line_svg(&curve, &format!("perplexity vs alpha, axis {axis}")),
                    )?;
                }
            }
        }
        std::io::stdout().flush().ok();
        Ok(ExitCode::SUCCESS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_artifact_names_producer() {
        let err = require(PathBuf::from("/nonexistent/coordinate.json"), "probe").unwrap_err();
        assert!(err.to_string().contains("run `probe` first"));
    }

    #[test]
    fn basic_persona_from_config() {
        let mut cfg = RunConfig::default();
        cfg.persona.country = Some("Denmark".into());
        let p = resolve_persona(&cfg, PersonaKind::Basic).unwrap().unwrap();
        assert_eq!(p.text, "You are a person born in Denmark and live in Denmark");
        assert!(resolve_persona(&cfg, PersonaKind::None).unwrap().is_none());
    }
}
