use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kgalign_core::eval::{make_harder_split, top_candidates};
use kgalign_core::kg::write_links;
use kgalign_core::pipeline::Prepared;
use kgalign_core::rpr::write_path_vocab;
use kgalign_core::{evaluate, mine, AlignmentSeeds, EntityId, SeedSplit};
use rayon::prelude::*;

use crate::config::Settings;
use crate::dataset::{
    copy_files, load_path_edges, path_files, Checkpoint, Dataset, PathMeta, CKPT_PATHS, CONFIG, HISTORY, PARAMS,
    PATH_META, PATH_TRIPLES, PATH_VOCAB, REQUIRED, SPLIT_FILES,
};
use crate::manifest::RunManifest;

pub struct Run {
    pub settings: Settings,
    pub threads: usize,
    pub dry_run: bool,
}

impl Run {
    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, &self.settings, self.threads, self.dry_run)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("{}", path.display()))
}

fn has_split(dir: &Path) -> bool {
    SPLIT_FILES.iter().all(|f| dir.join(f).is_file())
}

/// Dataset split first, then a split stored with the mined paths, then a
/// fresh seeded split.
fn resolve_split(data: &Dataset, settings: &Settings, paths: Option<&Path>) -> Result<SeedSplit> {
    if data.fixed_split.is_none() {
        if let Some(dir) = paths.filter(|d| has_split(d)) {
            log::info!("using the split stored in {}", dir.display());
            return Ok(SeedSplit {
                train: AlignmentSeeds::new(data.read_links(&dir.join(SPLIT_FILES[0]))?)?,
                valid: AlignmentSeeds::new(data.read_links(&dir.join(SPLIT_FILES[1]))?)?,
                test: AlignmentSeeds::new(data.read_links(&dir.join(SPLIT_FILES[2]))?)?,
            });
        }
    }
    data.split(settings.split_ratio()?, settings.seed)
}

pub fn mine_paths(run: &Run, data_dir: &Path, out: &Path, json: bool) -> Result<()> {
    let s = &run.settings;
    let config = s.mine_config()?;
    let data = Dataset::load(data_dir)?;
    let split = resolve_split(&data, s, None)?;

    let mut manifest = run.manifest("mine-paths");
    manifest.add_inputs(&Dataset::files(data_dir))?;
    manifest.write(&out.join("manifest.json"))?;
    if run.dry_run {
        return Ok(());
    }

    let (kg1, kg2) = if s.inverse {
        (data.kg1.with_inverse_relations(), data.kg2.with_inverse_relations())
    } else {
        (data.kg1.clone(), data.kg2.clone())
    };
    let mined = mine(&kg1, &kg2, &split.train, &data.names1, &data.names2, &config)?;
    let mut k1 = kg1;
    let mut k2 = kg2;
    k1.set_paths_with_triples(mined.vocab1.clone(), mined.triples1.clone())?;
    k2.set_paths_with_triples(mined.vocab2.clone(), mined.triples2.clone())?;

    create_dir(out)?;
    write_path_vocab(&out.join(PATH_VOCAB), &mined.reliable, &k1, &k2)?;
    k1.write_path_triples(&out.join(PATH_TRIPLES[0]))?;
    k2.write_path_triples(&out.join(PATH_TRIPLES[1]))?;
    data.write_split(out, &split)?;
    let meta = PathMeta {
        inverse: s.inverse,
        stats: serde_json::to_value(&mined.stats)?,
    };
    write(&out.join(PATH_META), &(serde_json::to_string_pretty(&meta)? + "\n"))?;

    let st = &mined.stats;
    if json {
        println!("{}", serde_json::to_string(st)?);
    } else {
        println!("seed pairs          {}", st.seed_pairs);
        println!("matched neighbors   {}", st.matched_neighbors);
        println!("candidate pairs     {}", st.candidate_pairs);
        println!("reliable pairs      {}", st.kept_pairs);
        println!("paths  kg1 / kg2    {} / {}", st.paths1, st.paths2);
        println!("triples kg1 / kg2   {} / {}", st.path_triples1, st.path_triples2);
        println!("hubs skipped        {}", st.skipped_hubs);
    }
    Ok(())
}

/// `paths` is `None` for relation-only training.
pub fn train(run: &Run, data_dir: &Path, paths: Option<&Path>, out: &Path) -> Result<()> {
    let s = &run.settings;
    let encoder = s.encoder()?;
    let config = s.train_config()?;
    let data = Dataset::load(data_dir)?;
    data.check_dim(&encoder)?;
    let split = resolve_split(&data, s, paths)?;
    let path_dir = paths.filter(|_| s.use_paths);
    let path_edges = match path_dir {
        Some(dir) => Some(load_path_edges(dir, &data.kg1, &data.kg2)?),
        None => None,
    };

    let mut manifest = run.manifest("train");
    manifest.add_inputs(&Dataset::files(data_dir))?;
    if let Some(dir) = path_dir {
        manifest.add_inputs(&path_files(dir))?;
    }
    manifest.write(&out.join("manifest.json"))?;
    if run.dry_run {
        return Ok(());
    }

    let mut prep = Prepared::without_paths(data.kg1.clone(), data.kg2.clone())?;
    prep.path_edges = path_edges;
    let model = prep.train(&data.names1, &data.names2, &split.train, &split.valid, encoder, &config)?;

    create_dir(out)?;
    write(&out.join(PARAMS), &model.store.to_checkpoint())?;
    write(&out.join(CONFIG), &s.to_toml())?;
    write(&out.join(HISTORY), &model.history_csv())?;
    data.write_split(out, &split)?;
    if let Some(dir) = path_dir {
        copy_files(&path_files(dir), &out.join(CKPT_PATHS))?;
    }

    let best = model.history.iter().filter_map(|r| r.val_hits1).fold(f64::NAN, f64::max);
    println!(
        "trained {} epochs; best validation hits@1 {:.4} at epoch {}",
        model.history.len(),
        best,
        model.trace.best_epoch.map(|e| e.to_string()).unwrap_or_else(|| "-".into())
    );
    Ok(())
}

fn align_manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn align(run: &Run, ckpt: &Checkpoint, data_dir: &Path, out: &Path) -> Result<()> {
    let s = &run.settings;
    let data = Dataset::load(data_dir)?;
    let seeds: HashSet<EntityId> = ckpt.seed_links(&data)?.into_iter().map(|p| p.0).collect();

    let mut manifest = run.manifest("align");
    manifest.add_inputs(&Dataset::files(data_dir))?;
    manifest.add_inputs(&Checkpoint::files(&ckpt.dir))?;
    manifest.write(&align_manifest_path(out))?;
    if run.dry_run {
        return Ok(());
    }

    let emb = ckpt.embed(&data)?;
    let mut sources: Vec<EntityId> = (0..data.kg1.num_entities())
        .map(EntityId)
        .filter(|e| !seeds.contains(e))
        .collect();
    sources.sort_by(|a, b| data.kg1.entity_uri(*a).cmp(data.kg1.entity_uri(*b)));
    let rows: Vec<Vec<(EntityId, f64)>> = sources
        .par_iter()
        .map(|&e| top_candidates(&emb, s.theta_inf, e, s.top_k))
        .collect();

    let mut text = String::new();
    for (&src, cands) in sources.iter().zip(&rows) {
        for (rank, (c, d)) in cands.iter().enumerate() {
            writeln!(
                text,
                "{}\t{}\t{}\t{}",
                data.kg1.entity_uri(src),
                data.kg2.entity_uri(*c),
                d,
                rank + 1
            )?;
        }
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write(out, &text)?;
    log::info!("wrote {} candidates for {} entities to {}", text.lines().count(), sources.len(), out.display());
    Ok(())
}

pub fn eval(run: &Run, ckpt: &Checkpoint, data_dir: &Path, manifest_path: &Path, json: bool) -> Result<()> {
    let s = &run.settings;
    let candidates = s.candidates()?;
    let data = Dataset::load(data_dir)?;
    let mut test = ckpt.test_links(&data)?;
    if s.harder < 1.0 {
        test = make_harder_split(&test, &data.names1, &data.names2, s.harder)?;
    }
    let test = AlignmentSeeds::<()>::new(test)?;

    let mut manifest = run.manifest("eval");
    manifest.add_inputs(&Dataset::files(data_dir))?;
    manifest.add_inputs(&Checkpoint::files(&ckpt.dir))?;
    manifest.write(manifest_path)?;

    let emb = ckpt.embed(&data)?;
    if run.dry_run {
        return Ok(());
    }
    let report = evaluate(&test, &emb, s.theta_inf, &[1, 5, 10], candidates).report();
    let table = format!(
        "metric   value\nhits@1   {:.4}\nhits@5   {:.4}\nhits@10  {:.4}\nmrr      {:.4}\nn        {}\n",
        report.hits1, report.hits5, report.hits10, report.mrr, report.n
    );
    if json {
        eprint!("{table}");
        println!("{}", serde_json::to_string(&report)?);
    } else {
        print!("{table}");
    }
    Ok(())
}

pub fn harder_split(run: &Run, data_dir: &Path, out: &Path) -> Result<()> {
    let s = &run.settings;
    let data = Dataset::load(data_dir)?;
    let kept = make_harder_split(&data.links, &data.names1, &data.names2, s.harder)?;
    let split = kgalign_core::kg::split_links(kept.clone(), s.split_ratio()?, s.seed)?;

    let mut manifest = run.manifest("harder-split");
    manifest.add_inputs(&Dataset::files(data_dir))?;
    manifest.write(&out.join("manifest.json"))?;
    if run.dry_run {
        return Ok(());
    }

    create_dir(out)?;
    let copied: Vec<PathBuf> = REQUIRED
        .iter()
        .filter(|&&f| f != "ent_links")
        .map(|f| data_dir.join(f))
        .collect();
    copy_files(&copied, out)?;
    write_links(&out.join("ent_links"), &kept, &data.kg1, &data.kg2)?;
    data.write_split(out, &split)?;
    println!("kept {} of {} links in {}", kept.len(), data.links.len(), out.display());
    Ok(())
}
