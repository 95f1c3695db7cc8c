use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use vbfi_core::cluster::{ApConfig, Preference};
use vbfi_core::concepts::{build_index, build_views, co_favored_concepts, expand_concepts, load_concept_list};
use vbfi_core::data::{load_dataset_dir, save_dataset_dir};
use vbfi_core::eval::{
    best_single_view, cross_validate, fold_csv, summary_csv, sweep, sweep_csv, sweep_svg, CvData, Learner, SweepParam,
};
use vbfi_core::io::write_atomic;
use vbfi_core::questionnaire::{design_questionnaire, load_manifest, load_responses, render_manifest, score_response, DesignOptions};
use vbfi_core::synth::{generate_synthetic, SynthSpec};
use vbfi_core::vgbdt::{load_model, save_model, train};
use vbfi_core::{ConceptHierarchy, Dataset, Trait, ViewMatrix};
use vbfi_service::ServiceConfig;

use crate::args::*;
use crate::UsageError;

pub const CONCEPTS_FILE: &str = "concepts.txt";
pub const HIERARCHY_FILE: &str = "hierarchy.json";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn model_path(dir: &Path, t: Trait) -> PathBuf {
    dir.join(format!("model_{}.json", t.code()))
}

fn default_informative(views: usize) -> Vec<usize> {
    if views >= 32 {
        vec![3, 10, 17, 24, 31]
    } else {
        let n = views.min(5);
        (0..n).map(|j| j * views / n).collect()
    }
}

fn hierarchy_json(h: &ConceptHierarchy) -> Vec<u8> {
    let edges: Vec<_> = h
        .concepts()
        .flat_map(|c| h.parents_of(c).iter().map(move |p| json!({ "child": c, "parent": p })))
        .collect();
    let mut bytes = serde_json::to_vec_pretty(&json!({ "edges": edges })).expect("edges serialize");
    bytes.push(b'\n');
    bytes
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let defaults = SynthSpec::default();
    let informative = a.informative.clone().unwrap_or_else(|| default_informative(a.views));
    let amplitudes = match &a.amplitudes {
        Some(v) => v.clone(),
        None => defaults.amplitudes.iter().copied().cycle().take(informative.len()).collect(),
    };
    let spec = SynthSpec {
        seed: a.seed,
        num_users: a.users,
        num_views: a.views,
        feature_dim: a.feature_dim,
        informative_views: informative,
        levels: a.levels,
        amplitudes,
        noise_std: a.noise_std,
        pool_images_per_concept: a.pool_images,
    };
    let data = generate_synthetic(&spec).map_err(|e| usage(e.to_string()))?;
    save_dataset_dir(&data.dataset, &a.out)?;
    let mut concepts = data.concepts.join("\n");
    concepts.push('\n');
    write(&a.out.join(CONCEPTS_FILE), concepts.as_bytes())?;
    write(&a.out.join(HIERARCHY_FILE), &hierarchy_json(&vbfi_core::synth::synthetic_hierarchy(a.views)))?;
    let planted: Vec<_> = data
        .planted
        .iter()
        .map(|p| {
            json!({
                "trait": p.trait_, "view": p.view, "concept": data.concepts[p.view],
                "feature": p.feature, "levels": p.levels, "amplitude": p.amplitude,
            })
        })
        .collect();
    let mut bytes = serde_json::to_vec_pretty(&json!({ "seed": a.seed, "noise_std": a.noise_std, "steps": planted }))?;
    bytes.push(b'\n');
    write(&a.out.join("planted.json"), &bytes)?;
    log::info!(
        "wrote {} users, {} images, {} concepts to {}",
        data.dataset.users.len(),
        data.dataset.images.len(),
        data.concepts.len(),
        a.out.display()
    );
    Ok(())
}

pub fn expand(a: &ExpandArgs) -> Result<()> {
    let ds = load_dataset_dir(&a.data)?;
    let hierarchy_path = a.hierarchy.clone().unwrap_or_else(|| a.data.join(HIERARCHY_FILE));
    let hierarchy = ConceptHierarchy::load_json(&hierarchy_path)?;
    let expanded = expand_concepts(&ds, &hierarchy, a.levels)?;
    save_dataset_dir(&expanded, &a.out)?;
    for extra in [CONCEPTS_FILE, HIERARCHY_FILE] {
        let src = a.data.join(extra);
        if src.exists() && a.out.join(extra) != src {
            write(&a.out.join(extra), &std::fs::read(&src).with_context(|| format!("reading {}", src.display()))?)?;
        }
    }
    let before: BTreeSet<&String> = ds.images.values().flat_map(|i| &i.detected_concepts).collect();
    let after: BTreeSet<&String> = expanded.images.values().flat_map(|i| &i.detected_concepts).collect();
    log::info!("{} concepts expanded to {}", before.len(), after.len());
    Ok(())
}

pub struct Prepared {
    pub dataset: Dataset,
    pub views: ViewMatrix,
}

/// Loads a dataset and builds the multi-view rows over the chosen concepts.
pub fn prepare(a: &DataArgs) -> Result<Prepared> {
    let dataset = load_dataset_dir(&a.data)?;
    let idx = build_index(&dataset);
    let listed = a.concepts.clone().or_else(|| Some(a.data.join(CONCEPTS_FILE)).filter(|p| p.exists()));
    let (concepts, users) = match listed {
        Some(path) => {
            let concepts = load_concept_list(&path)?;
            if concepts.is_empty() {
                bail!("{}: no concepts listed", path.display());
            }
            let mut common: Option<BTreeSet<String>> = None;
            for c in &concepts {
                let users = idx
                    .user_sets
                    .get(c)
                    .with_context(|| format!("concept `{c}` from {} has no favorites", path.display()))?;
                common = Some(match common {
                    None => users.clone(),
                    Some(acc) => acc.intersection(users).cloned().collect(),
                });
            }
            (concepts, common.unwrap_or_default())
        }
        None => {
            let picked = co_favored_concepts(&idx, a.min_common_users)?;
            log::info!(
                "selected {} concepts co-favored by {} users",
                picked.concepts.len(),
                picked.common_users.len()
            );
            (picked.concepts, picked.common_users)
        }
    };
    if users.len() < 2 {
        bail!("only {} user(s) favor every selected concept", users.len());
    }
    let views = build_views(&dataset, &concepts, &users, a.agg.into())?;
    Ok(Prepared { dataset, views })
}

fn traits_of(t: &TraitArgs, default_all: bool) -> Result<Vec<Trait>> {
    if t.all_traits || (t.traits.is_empty() && default_all) {
        return Ok(Trait::ALL.to_vec());
    }
    if t.traits.is_empty() {
        return Err(usage("pass --trait <T> or --all-traits"));
    }
    let set: BTreeSet<Trait> = t.traits.iter().copied().collect();
    Ok(Trait::ALL.into_iter().filter(|x| set.contains(x)).collect())
}

fn boosting(b: &BoostArgs) -> Result<vbfi_core::BoostingConfig> {
    let cfg = b.config();
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let traits = traits_of(&a.traits, false)?;
    let cfg = boosting(&a.boost)?;
    let prepared = prepare(&a.data)?;
    for t in traits {
        let labels = prepared.dataset.labels(t);
        let model = train(&prepared.views, &labels, &cfg, t).with_context(|| format!("training trait {t}"))?;
        let path = model_path(&a.out, t);
        save_model(&model, &path)?;
        let chosen: Vec<&str> = model.rounds.iter().map(|r| r.concept.as_str()).collect();
        log::info!("{t}: F0={:.4} rounds {:?} -> {}", model.f0, chosen, path.display());
    }
    Ok(())
}

fn check_cv(cv: &CvArgs) -> Result<()> {
    if cv.folds < 2 || cv.repeats == 0 {
        return Err(usage("need --folds >= 2 and --repeats >= 1"));
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let traits = traits_of(&a.traits, true)?;
    let cfg = boosting(&a.boost)?;
    check_cv(&a.cv)?;
    let prepared = prepare(&a.data)?;
    let (folds, repeats, seed) = (a.cv.folds, a.cv.repeats, a.cv.seed);
    let mut fold_reports = Vec::new();
    let mut summary = Vec::new();
    for t in traits {
        let labels = prepared.dataset.labels(t);
        let data = CvData::from_views(&prepared.views, &labels)?;
        let mean = cross_validate(&data, &Learner::Mean, folds, repeats, seed, t)?;
        let mut boosted = cross_validate(&data, &Learner::Vgbdt(cfg), folds, repeats, seed, t)?;
        if a.no_single_view {
            boosted.compare_to(&mean)?;
        } else {
            let (view, mut single) = best_single_view(&data, cfg.max_leaves, cfg.min_leaf, folds, repeats, seed, t)?;
            boosted.compare_to(&single)?;
            single.compare_to(&mean)?;
            log::info!(
                "{t}: vgbdt {:.4} vs single view {} ({}) {:.4}, p={:.3e}",
                boosted.mean_rmse,
                view,
                data.views[view],
                single.mean_rmse,
                boosted.p_value().unwrap_or(f64::NAN)
            );
            summary.push(single);
        }
        summary.push(mean);
        fold_reports.push(boosted.clone());
        summary.push(boosted);
    }
    if let Some(path) = &a.summary {
        write(path, summary_csv(&summary).as_bytes())?;
    }
    emit(a.out.as_deref(), &fold_csv(&fold_reports))
}

pub fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let traits = traits_of(&a.traits, true)?;
    boosting(&a.boost)?;
    check_cv(&a.cv)?;
    if a.values.is_empty() {
        return Err(usage("--values needs at least one value"));
    }
    let param = match a.param {
        Param::M => SweepParam::Rounds,
        Param::J => SweepParam::Leaves,
    };
    let base = a.boost.config();
    for &v in &a.values {
        let mut cfg = base;
        match param {
            SweepParam::Rounds => cfg.rounds = v,
            SweepParam::Leaves => cfg.max_leaves = v,
        }
        cfg.validate().map_err(|e| usage(format!("{}={v}: {e}", param.label())))?;
    }
    let prepared = prepare(&a.data)?;
    let mut rows = Vec::new();
    for t in traits {
        let labels = prepared.dataset.labels(t);
        let data = CvData::from_views(&prepared.views, &labels)?;
        rows.extend(sweep(&data, &base, param, &a.values, a.cv.folds, a.cv.repeats, a.cv.seed, t)?);
    }
    if let Some(path) = &a.plot {
        write(path, sweep_svg(&rows).as_bytes())?;
    }
    emit(a.out.as_deref(), &sweep_csv(&rows))
}

pub fn design(a: &DesignArgs) -> Result<()> {
    if a.cluster_choice == 0 {
        return Err(usage("--cluster-choice must be at least 1"));
    }
    let mut models = BTreeMap::new();
    for t in Trait::ALL {
        let path = model_path(&a.models, t);
        if path.exists() {
            models.insert(t, load_model(&path)?);
        }
    }
    if models.is_empty() {
        bail!("no model_<T>.json files in {}", a.models.display());
    }
    let dataset = load_dataset_dir(&a.data)?;
    let idx = build_index(&dataset);
    let opts = DesignOptions {
        version_id: a.version_id.clone().unwrap_or_else(|| format!("v{}", a.cluster_choice)),
        cluster_choice: a.cluster_choice,
        ap: ApConfig {
            damping: a.ap_damping,
            max_iter: a.ap_max_iter,
            convergence_iter: a.ap_convergence_iter,
            preference: a.ap_preference.map_or(Preference::Median, Preference::Value),
            seed: a.seed,
        },
        seed: a.seed,
    };
    let q = design_questionnaire(&models, &dataset, &idx, &opts)?;
    write(&a.out, &render_manifest(&q))?;
    log::info!("wrote {} questions ({}) to {}", q.num_questions(), q.version_id, a.out.display());
    Ok(())
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let q = load_manifest(&a.questionnaire)?;
    let sheets = load_responses(&a.responses)?;
    let traits: Vec<Trait> = Trait::ALL.into_iter().filter(|t| q.traits.contains_key(t)).collect();
    let mut out = String::from("subject_id,version_id");
    for t in &traits {
        let _ = write!(out, ",{t}");
    }
    out.push('\n');
    for (i, sheet) in sheets.iter().enumerate() {
        let scores = score_response(&q, sheet)
            .with_context(|| format!("{} line {}: subject `{}`", a.responses.display(), i + 1, sheet.subject_id))?;
        let _ = write!(out, "{},{}", sheet.subject_id, q.version_id);
        for t in &traits {
            let _ = write!(out, ",{}", scores[t]);
        }
        out.push('\n');
    }
    emit(a.out.as_deref(), &out)
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let cfg = ServiceConfig {
        host: a.host,
        port: a.port,
        questionnaires: a.questionnaire.clone(),
        images_dir: a.images_dir.clone(),
        journal: a.journal.clone(),
        allow_origin: a.allow_origin.clone(),
        static_dir: a.static_dir.clone(),
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(vbfi_service::serve(cfg))?;
    Ok(())
}
