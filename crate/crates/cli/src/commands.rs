use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::net::ToSocketAddrs;
use std::path::Path;
use std::sync::Arc;

use stylesearch_core::blend::BlendParams;
use stylesearch_core::catalog::{
    default_stoplist, frequent_name_words, gen_synthetic_with, load_catalog, split, Catalog,
    SplitSpec, SynthConfig,
};
use stylesearch_core::deepstyle::{
    train_classifier, train_siamese, ClassifierConfig, SiameseConfig, TrainingData,
};
use stylesearch_core::embed::{
    description_corpus, train_cbow, train_context, CbowConfig, EmbeddingTable,
};
use stylesearch_core::engine::{ArtifactPaths, Engine, Method, Request};
use stylesearch_core::evalkit::{
    frequent_description_words, protocol_queries, sweep_n1_n2, EvalQuery, EvalReport,
    SimilarityContext,
};
use stylesearch_core::par::Execution;
use stylesearch_core::visfeat::{catalog_features, load_features, save_features, FeatureMap};

use crate::args::*;
use crate::Failure;

type Outcome = Result<(), Failure>;

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::TrainEmbed(a) => embed(a, false),
        Command::TrainContext(a) => embed(a, true),
        Command::TrainDeepstyle(a) => deepstyle(a),
        Command::TrainSiamese(a) => siamese(a),
        Command::Index(a) => index(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Serve(a) => serve(a),
    }
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn load_engine(a: &Artifacts, seed: u64) -> Result<Engine, Failure> {
    let paths = ArtifactPaths {
        catalog: a.catalog.clone(),
        features: a.features.clone(),
        text: a.text_emb.clone(),
        context: a.context.clone(),
        deepstyle: a.deepstyle.clone(),
        siamese: a.siamese.clone(),
    };
    let engine = Engine::load(&paths, seed)?;
    log::info!(
        "loaded {} items, {} sets; ready: {}",
        engine.catalog().len(),
        engine.catalog().set_count(),
        Method::ALL
            .iter()
            .filter(|m| engine.is_ready(**m))
            .map(|m| m.name())
            .collect::<Vec<_>>()
            .join(",")
    );
    Ok(engine)
}

fn synth(a: SynthArgs) -> Outcome {
    let cfg = SynthConfig {
        feature_dim: a.feature_dim,
        feature_noise: a.feature_noise,
        ..SynthConfig::new(a.items, a.styles, a.sets, a.seed)
    };
    let s = gen_synthetic_with(&cfg)?;
    s.catalog.save(&a.output)?;
    if let Some(p) = &a.styles_out {
        let json = serde_json::to_string_pretty(&s.style_of).expect("style map serializes");
        write_file(p, &json)?;
    }
    log::info!("wrote {} items and {} sets to {}", s.catalog.len(), s.catalog.set_count(), a.output.display());
    Ok(())
}

fn external_features(path: Option<&Path>, cat: &Catalog) -> Result<Option<FeatureMap>, Failure> {
    Ok(match path {
        Some(p) => Some(load_features(p, cat.feature_dim())?),
        None => None,
    })
}

fn ingest(a: IngestArgs) -> Outcome {
    let cat = load_catalog(&a.catalog)?;
    let ext = external_features(a.features.as_deref(), &cat)?;
    let feats = catalog_features(&cat, ext.as_ref())?;
    cat.save(&a.output)?;
    save_features(&feats, cat.feature_dim(), &a.features_out)?;
    log::info!("{} items, {} sets, {} categories", cat.len(), cat.set_count(), cat.categories().len());
    Ok(())
}

fn embed(a: EmbedArgs, context: bool) -> Outcome {
    let base = if context { CbowConfig::context() } else { CbowConfig::text() };
    let cfg = CbowConfig {
        dim: a.dim,
        window: a.window.unwrap_or(base.window),
        negatives: a.negatives,
        epochs: a.epochs,
        learning_rate: a.lr,
        min_learning_rate: a.min_lr,
        min_count: if context { base.min_count } else { a.min_count },
        seed: a.seed,
    };
    let cat = load_catalog(&a.catalog)?;
    let run = if context {
        train_context(&cat, &cfg)?
    } else {
        train_cbow(&description_corpus(&cat), &cfg)?
    };
    let default_out = if context { "context.emb" } else { "text.emb" };
    let out = a.output.unwrap_or_else(|| default_out.into());
    run.table.save(&out)?;
    log::info!("{} vectors of dim {} -> {}", run.table.len(), run.table.dim(), out.display());
    Ok(())
}

fn training_data(i: &TrainInputs) -> Result<TrainingData, Failure> {
    let cat = load_catalog(&i.catalog)?;
    let ext = external_features(i.features.as_deref(), &cat)?;
    let feats = catalog_features(&cat, ext.as_ref())?;
    let text = EmbeddingTable::load(&i.text_emb)?;
    let sp = split(&cat, SplitSpec { test_fraction: i.split.test_fraction, seed: i.split.split_seed })?;
    let subset = if i.all_items { None } else { Some(&sp.train[..]) };
    let data = TrainingData::build(&cat, &feats, &text, subset)?;
    log::info!("{} training items", data.len());
    Ok(data)
}

fn deepstyle(a: DeepStyleArgs) -> Outcome {
    let data = training_data(&a.inputs)?;
    let cfg = ClassifierConfig {
        epochs: a.sgd.epochs,
        learning_rate: a.sgd.lr,
        batch_size: a.sgd.batch_size,
        momentum: a.sgd.momentum,
        seed: a.sgd.seed,
        branch_dim: a.sgd.branch_dim,
        ..ClassifierConfig::default()
    };
    let model = train_classifier(&data, &cfg)?;
    model.save(&a.output)?;
    log::info!("final loss {:?} -> {}", model.epoch_loss.last(), a.output.display());
    Ok(())
}

fn siamese(a: SiameseArgs) -> Outcome {
    let data = training_data(&a.inputs)?;
    let cfg = SiameseConfig {
        margin: a.margin,
        alpha: a.alpha,
        beta: a.beta,
        gamma: a.gamma,
        pair_seed: a.sgd.seed,
        learning_rate: a.sgd.lr,
        epochs: a.sgd.epochs,
        batch_size: a.sgd.batch_size,
        momentum: a.sgd.momentum,
        branch_dim: a.sgd.branch_dim,
        ..SiameseConfig::default()
    };
    let model = train_siamese(&data, &cfg)?;
    model.save(&a.output)?;
    log::info!("final loss {:?} -> {}", model.epoch_loss.last(), a.output.display());
    Ok(())
}

fn index(a: IndexArgs) -> Outcome {
    let engine = load_engine(&a.artifacts, 1)?;
    let cat = engine.catalog();
    let rows: Vec<(String, Vec<f64>)> = match a.space {
        Space::Description => {
            let spaces = engine.spaces().ok_or_else(|| Failure::data("--text-emb is required for the description space"))?;
            cat.item_ids()
                .filter_map(|id| spaces.text.item_vector(id).map(|v| (id.to_string(), v.to_vec())))
                .collect()
        }
        Space::Deepstyle | Space::Siamese => {
            let method = if a.space == Space::Deepstyle { Method::DeepStyle } else { Method::Siamese };
            let joint = engine
                .joint_index(method)
                .ok_or_else(|| Failure::data(format!("--{method} and --text-emb are required for the {method} space")))?;
            cat.item_ids()
                .filter_map(|id| joint.embedding(id).map(|v| (id.to_string(), v.to_vec())))
                .collect()
        }
    };
    let dim = rows.first().map(|r| r.1.len()).ok_or_else(|| Failure::data("no item could be embedded"))?;
    let table = EmbeddingTable::from_rows(dim, rows)?;
    table.save(&a.output)?;
    log::info!("{} vectors of dim {dim} -> {}", table.len(), a.output.display());
    Ok(())
}

fn query(a: QueryArgs) -> Outcome {
    let engine = load_engine(&a.artifacts, a.seed)?;
    let mut req = Request::item(a.item.clone(), a.text.clone(), a.method, a.k);
    if a.n1.is_some() || a.n2.is_some() || a.n3.is_some() {
        let d = BlendParams::default();
        req = req.with_params(BlendParams {
            n1: a.n1.unwrap_or(d.n1),
            n2: a.n2.unwrap_or(d.n2),
            n3: a.n3.unwrap_or(a.k),
        });
    }
    let list = engine.query(&req)?;
    for w in &list.warnings {
        log::warn!("{w}");
    }
    match a.format {
        Format::Json => {
            let v = serde_json::json!({
                "item": a.item,
                "text": a.text,
                "method": a.method,
                "k": a.k,
                "results": list.entries,
                "warnings": list.warnings,
            });
            println!("{}", serde_json::to_string_pretty(&v).expect("results serialize"));
        }
        Format::Table => {
            println!("{:>4}  {:<10} {:<12} {:>9}  {:<8} name", "rank", "id", "category", "score", "stage");
            for (r, e) in list.entries.iter().enumerate() {
                let item = engine.catalog().item(&e.id);
                let score = e.score.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
                let stage = serde_json::to_value(e.stage).expect("stage serializes");
                println!(
                    "{:>4}  {:<10} {:<12} {:>9}  {:<8} {}",
                    r + 1,
                    e.id,
                    item.map(|i| i.category.as_str()).unwrap_or(""),
                    score,
                    stage.as_str().unwrap_or(""),
                    item.map(|i| i.name.as_str()).unwrap_or("")
                );
            }
        }
    }
    Ok(())
}

/// Queries and similarity ground truth for a loaded engine.
fn protocol(engine: &Engine, p: &ProtocolArgs) -> Result<(Vec<EvalQuery>, SimilarityContext), Failure> {
    let cat = engine.catalog();
    let stop = default_stoplist();
    let sp = split(cat, SplitSpec { test_fraction: p.split.test_fraction, seed: p.split.split_seed })?;
    let words = frequent_description_words(cat, p.top_words, &stop);
    let vocab = engine.spaces().map(|s| s.text.table());
    let queries = protocol_queries(cat, &sp.test, &words, vocab, p.seed)?;
    let ctx = SimilarityContext::new(cat, frequent_name_words(cat, p.top_words, &stop));
    log::info!("{} protocol queries", queries.len());
    Ok((queries, ctx))
}

fn fmt_score(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Per-text rows, one column per method, then the overall mean.
pub fn eval_table(reports: &[EvalReport]) -> String {
    let texts: BTreeSet<&str> = reports.iter().flat_map(|r| r.per_text.keys().map(String::as_str)).collect();
    let width = texts.iter().map(|t| t.len()).max().unwrap_or(0).max("Average".len());
    let mut out = format!("{:<width$}", "text");
    for r in reports {
        write!(out, " {:>10}", r.method).unwrap();
    }
    out.push('\n');
    for t in &texts {
        write!(out, "{t:<width$}").unwrap();
        for r in reports {
            write!(out, " {:>10}", fmt_score(r.per_text.get(*t).map(|b| b.mean_ails))).unwrap();
        }
        out.push('\n');
    }
    write!(out, "{:<width$}", "Average").unwrap();
    for r in reports {
        write!(out, " {:>10}", fmt_score(r.mean_ails)).unwrap();
    }
    out.push('\n');
    out
}

fn eval(a: EvalArgs) -> Outcome {
    let engine = load_engine(&a.artifacts, a.protocol.seed)?;
    let methods: Vec<Method> = if a.method.is_empty() {
        Method::ALL.into_iter().filter(|m| engine.is_ready(*m)).collect()
    } else {
        a.method.clone()
    };
    if let Some(m) = methods.iter().find(|m| !engine.is_ready(**m)) {
        return Err(stylesearch_core::Error::MethodUnavailable(m.to_string()).into());
    }
    let (queries, ctx) = protocol(&engine, &a.protocol)?;
    let reports: Vec<EvalReport> = methods
        .iter()
        .map(|m| {
            let started = std::time::Instant::now();
            let r = engine
                .evaluate(*m, &queries, a.k, None, &ctx, a.protocol.pair_mode.into(), Execution::default())
                .labelled(m.name(), Some(a.protocol.seed));
            log::info!("{m}: {} evaluated, {} skipped in {:.2?}", r.evaluated, r.skipped, started.elapsed());
            r
        })
        .collect();
    print!("{}", eval_table(&reports));
    if let Some(p) = &a.report {
        write_file(p, &serde_json::to_string_pretty(&reports).expect("reports serialize"))?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Outcome {
    let engine = load_engine(&a.artifacts, a.protocol.seed)?;
    if !engine.is_ready(Method::Early) {
        return Err(stylesearch_core::Error::MethodUnavailable(Method::Early.to_string()).into());
    }
    let (queries, ctx) = protocol(&engine, &a.protocol)?;
    let matrix = sweep_n1_n2(
        &a.n1,
        &a.n2,
        a.n3,
        &queries,
        &ctx,
        engine.catalog(),
        a.protocol.pair_mode.into(),
        Execution::default(),
        |p, q| {
            let req = Request::item(q.item_id.clone(), q.text.clone(), Method::Early, p.n3).with_params(p);
            engine.query(&req).map(|r| r.entries.into_iter().map(|e| e.id).collect())
        },
    )?;
    let csv = matrix.to_csv();
    match &a.output {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Outcome {
    let engine = Arc::new(load_engine(&a.artifacts, a.seed)?);
    let addr = (a.host.as_str(), a.port)
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| Failure::data(format!("cannot resolve {}", a.host)))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(stylesearch_service::serve(engine, addr))?;
    Ok(())
}
