use std::path::Path;

use serde::Serialize;

use repinf_core::analysis::{
    self, active_neuron_count, build_concepts, cosine_similarity_matrix, distance_trajectory, hierarchy_distances,
    mean_abs_off_diagonal, min_distance, p_grid, stage_classification, ConceptSet, Stage,
};
use repinf_core::checkpoint::{self, CheckpointHeader, ModelKind};
use repinf_core::classifier::{
    classify_final_states, conditional_mean_trajectory, train_discriminator, DiscriminatorConfig, DiscriminatorModel,
};
use repinf_core::data::{Dataset, NUM_CLASSES};
use repinf_core::dynamics::{run_batch, Trajectory};
use repinf_core::experiments::{generalization_sweep, nz_sweep, streams, train_model, CellStatus, RunConfig};
use repinf_core::ndcore::{Rng, Tensor};
use repinf_core::nn::{grad_check as check_gradients, Activation, Conv2d, Dense, Dropout, GradCheckReport, Layer, MaxPool2d};
use repinf_core::nn::{Sequential, SequentialObjective};
use repinf_core::vae::{small_vae_objective, test_elbo, VaeModel};
use repinf_core::Error;

use crate::output::{f, header, indexed, write_manifest, OutDir};
use crate::Failure;

fn data_failure(e: Error) -> Failure {
    Failure::Data(e.to_string())
}

fn load_train(c: &RunConfig) -> Result<Dataset, Failure> {
    c.load_train().map_err(data_failure)
}

fn load_test(c: &RunConfig) -> Result<Dataset, Failure> {
    c.load_test().map_err(data_failure)
}

/// Loads a VAE checkpoint and records its latent width in the config.
fn load_vae(c: &mut RunConfig, path: &Path) -> Result<VaeModel<f32>, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("checkpoint {} not found", path.display())));
    }
    let (model, _) = VaeModel::<f32>::load(path, None).map_err(|e| match e {
        Error::Io { .. } | Error::Format { .. } => Failure::Usage(format!("unreadable checkpoint: {e}")),
        other => Failure::from(other),
    })?;
    c.latent_dim = model.latent_dim();
    c.hidden = model.dims().hidden;
    Ok(model)
}

fn validate(c: &RunConfig) -> Result<(), Failure> {
    c.validate().map_err(|e| Failure::Usage(e.to_string()))
}

#[derive(Serialize)]
struct NoExtra {}

pub fn train(c: RunConfig) -> Result<(), Failure> {
    validate(&c)?;
    let train_set = load_train(&c)?;
    let test_set = load_test(&c)?;
    let mut out = OutDir::create(&c.output_dir)?;
    let mut log_rows = Vec::new();
    let result = train_model(&c, &train_set, Some(&c.output_dir), |e| {
        eprintln!("epoch {:>3}  lr {:<8}  elbo {:.3}  kl {:.3}", e.epoch, e.learning_rate, e.train.elbo, e.train.kl_term);
        log_rows.push(vec![
            e.epoch.to_string(),
            e.stage.to_string(),
            f(e.learning_rate),
            f(e.train.kl_term),
            f(e.train.recon_term),
            f(e.train.elbo),
        ]);
    });
    for k in 0..c.schedule.len() {
        let name = format!("stage{k}.ckpt");
        if c.output_dir.join(&name).exists() {
            out.files.push(name);
        }
    }
    out.csv("train_log.csv", &header(&["epoch", "stage", "learning_rate", "kl_term", "recon_term", "elbo"]), log_rows)?;
    match result {
        Ok((model, _)) => {
            model.save(&out.path("vae.ckpt"), c.seed, c.epochs())?;
            let elbo = test_elbo(&model, &test_set, c.stream(streams::EVAL))?;
            eprintln!("test elbo {elbo:.3}");
            #[derive(Serialize)]
            struct Summary {
                status: &'static str,
                test_elbo: f64,
            }
            write_manifest(&mut out, "train", &c, Summary { status: "ok", test_elbo: elbo })
        }
        Err(e @ Error::Divergence { .. }) => {
            out.files.push("last_good.ckpt".into());
            #[derive(Serialize)]
            struct Summary {
                status: &'static str,
                error: String,
            }
            write_manifest(&mut out, "train", &c, Summary { status: "diverged", error: e.to_string() })?;
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn trial_rows(trajs: &[Trajectory]) -> Vec<Vec<String>> {
    trajs
        .iter()
        .map(|t| {
            vec![
                t.trial.to_string(),
                t.source_index.to_string(),
                t.label.to_string(),
                t.seed.to_string(),
                f(t.p),
                t.valid.to_string(),
            ]
        })
        .collect()
}

fn distance_rows(trajs: &[Trajectory], concepts: &ConceptSet) -> Result<Vec<Vec<String>>, Failure> {
    let mut rows = Vec::new();
    for tr in trajs {
        let d = hierarchy_distances(tr, concepts)?;
        for t in 0..tr.len() {
            rows.push(vec![
                tr.label.to_string(),
                tr.trial.to_string(),
                t.to_string(),
                f(d[0][t]),
                f(d[1][t]),
                f(d[2][t]),
            ]);
        }
    }
    Ok(rows)
}

pub fn infer(mut c: RunConfig, checkpoint_path: &Path, dump_arrays: bool) -> Result<(), Failure> {
    let model = load_vae(&mut c, checkpoint_path)?;
    validate(&c)?;
    let train_set = load_train(&c)?;
    let trajs = run_batch(&model, &train_set, c.label, c.trials, c.p, c.steps, c.stream(streams::TRIALS), c.workers)?;
    let concepts = build_concepts(&model, &train_set)?;

    let mut out = OutDir::create(&c.output_dir)?;
    let nz = model.latent_dim();
    let mut h = header(&["trial", "t"]);
    h.extend(indexed("z", nz));
    let rows = trajs.iter().flat_map(|tr| {
        (0..tr.len()).map(move |t| {
            let mut r = vec![tr.trial.to_string(), t.to_string()];
            r.extend(tr.z_seq.row(t).iter().map(|&v| f(v as f64)));
            r
        })
    });
    out.csv("trajectories.csv", &h, rows)?;
    out.csv("distances.csv", &header(&["label", "trial", "t", "d_memory", "d_concept", "d_abstract"]), distance_rows(&trajs, &concepts)?)?;
    out.csv("trials.csv", &header(&["trial", "source_index", "label", "seed", "p", "valid"]), trial_rows(&trajs))?;
    if dump_arrays {
        let hdr = CheckpointHeader::new::<f32>(ModelKind::Arrays, nz, 0, c.seed, 0);
        let blocks: Vec<(String, &Tensor<f32>)> = trajs.iter().map(|t| (format!("trial{}.z", t.trial), &t.z_seq)).collect();
        checkpoint::write(&out.path("trajectories.bin"), &hdr, &blocks)?;
    }
    write_manifest(&mut out, "infer", &c, NoExtra {})
}

pub fn concepts(mut c: RunConfig, checkpoint_path: &Path) -> Result<(), Failure> {
    let model = load_vae(&mut c, checkpoint_path)?;
    let train_set = load_train(&c)?;
    let cs = build_concepts(&model, &train_set)?;
    let mut out = OutDir::create(&c.output_dir)?;
    let mut h = header(&["label"]);
    h.extend(indexed("z", cs.latent_dim()));
    let mut rows: Vec<Vec<String>> = (0..NUM_CLASSES)
        .map(|k| {
            let mut r = vec![k.to_string()];
            r.extend(cs.concepts.row(k).iter().map(|&v| f(v as f64)));
            r
        })
        .collect();
    let mut abs = vec!["all".to_string()];
    abs.extend(cs.abstract_concept.data().iter().map(|&v| f(v as f64)));
    rows.push(abs);
    out.csv("concepts.csv", &h, rows)?;
    write_manifest(&mut out, "concepts", &c, NoExtra {})
}

fn cosine_rows(cos: &Tensor<f64>) -> Vec<Vec<String>> {
    (0..cos.rows())
        .map(|i| {
            let mut r = vec![i.to_string()];
            r.extend(cos.row(i).iter().map(|&v| f(v)));
            r
        })
        .collect()
}

pub fn analyze(mut c: RunConfig, checkpoint_path: &Path, threshold: f64) -> Result<(), Failure> {
    let model = load_vae(&mut c, checkpoint_path)?;
    let train_set = load_train(&c)?;
    let cs = build_concepts(&model, &train_set)?;
    let cos = cosine_similarity_matrix(&cs.concepts)?;
    let (active, stds) = active_neuron_count(&cs.memories, threshold)?;
    let pca = analysis::pca(&cs.memories)?;

    let mut out = OutDir::create(&c.output_dir)?;
    let mut h = header(&["label"]);
    h.extend(indexed("c", NUM_CLASSES));
    out.csv("cosine.csv", &h, cosine_rows(&cos))?;
    let rows = stds.iter().enumerate().map(|(j, &s)| vec![j.to_string(), f(s), (s > threshold).to_string()]);
    out.csv("active_neurons.csv", &header(&["dim", "std", "active"]), rows)?;
    #[derive(Serialize)]
    struct Summary {
        active_neurons: usize,
        threshold: f64,
        mean_abs_off_diagonal: f64,
        components_for_70_percent: usize,
    }
    let summary = Summary {
        active_neurons: active,
        threshold,
        mean_abs_off_diagonal: mean_abs_off_diagonal(&cos)?,
        components_for_70_percent: pca.components_for(0.7),
    };
    eprintln!(
        "active units {}  mean |off-diagonal cosine| {:.4}  components for 70% {}",
        summary.active_neurons, summary.mean_abs_off_diagonal, summary.components_for_70_percent
    );
    out.json("summary.json", &summary)?;
    write_manifest(&mut out, "analyze", &c, NoExtra {})
}

pub fn pca(mut c: RunConfig, checkpoint_path: &Path) -> Result<(), Failure> {
    let model = load_vae(&mut c, checkpoint_path)?;
    let train_set = load_train(&c)?;
    let cs = build_concepts(&model, &train_set)?;
    let p = analysis::pca(&cs.memories)?;
    let total: f64 = p.eigenvalues.iter().sum();
    let mut out = OutDir::create(&c.output_dir)?;
    let rows = p.eigenvalues.iter().enumerate().map(|(k, &l)| vec![(k + 1).to_string(), f(l), f(l / total), f(p.cumulative_ratio[k])]);
    out.csv("pca_eigen.csv", &header(&["component", "eigenvalue", "ratio", "cumulative_ratio"]), rows)?;
    let emb = p.project(&cs.memories, 2.min(p.components.len()))?;
    let rows = emb.iter().enumerate().map(|(i, e)| {
        let mut r = vec![i.to_string(), train_set.label(i).to_string()];
        r.extend(e.iter().map(|&v| f(v)));
        r
    });
    out.csv("pca_embedding.csv", &header(&["index", "label", "pc1", "pc2"]), rows)?;
    write_manifest(&mut out, "pca", &c, NoExtra {})
}

pub fn stages(mut c: RunConfig, checkpoint_path: &Path) -> Result<(), Failure> {
    let model = load_vae(&mut c, checkpoint_path)?;
    validate(&c)?;
    let train_set = load_train(&c)?;
    let grid = p_grid(c.p_max, c.p_step).map_err(|e| Failure::Usage(e.to_string()))?;
    let cs = build_concepts(&model, &train_set)?;
    let report = stage_classification(&model, &cs, &train_set, c.label, &grid, c.stage_trials, c.steps, c.stream(streams::STAGES), c.workers)?;
    let mut out = OutDir::create(&c.output_dir)?;
    let rows = report.rows.iter().flat_map(|r| {
        Stage::ALL.iter().enumerate().map(move |(k, s)| {
            vec![f(r.p), s.name().to_string(), f(r.mean[k]), f(r.standard_error[k]), r.winner.name().to_string()]
        })
    });
    out.csv("stages.csv", &header(&["p", "class", "mean", "se", "winner"]), rows)?;
    for r in &report.rows {
        eprintln!("p {:.2}  stage {}", r.p, r.winner.numeral());
    }
    write_manifest(&mut out, "stages", &c, NoExtra {})
}

pub fn sweep_nz(c: RunConfig, nz_values: &[usize]) -> Result<(), Failure> {
    validate(&c)?;
    let train_set = load_train(&c)?;
    let mut out = OutDir::create(&c.output_dir)?;
    let cells = nz_sweep(&c, nz_values, &train_set, c.workers)?;
    let mut curve_rows = Vec::new();
    let mut cos_rows = Vec::new();
    let mut summary_rows = Vec::new();
    for cell in &cells {
        let nz = cell.config.latent_dim.to_string();
        let status = match &cell.status {
            CellStatus::Ok => "ok".to_string(),
            CellStatus::Diverged { .. } => "diverged".to_string(),
            CellStatus::Failed { message } => format!("failed: {message}"),
        };
        let (mut d0, mut dmin, mut tstar, mut dt) = (String::new(), String::new(), String::new(), String::new());
        if let Some(curve) = &cell.concept_curve {
            for (t, &d) in curve.iter().enumerate() {
                curve_rows.push(vec![nz.clone(), t.to_string(), f(d)]);
            }
            let (m, ts) = min_distance(curve)?;
            d0 = f(curve[0]);
            dmin = f(m);
            tstar = ts.to_string();
            dt = f(curve[curve.len() - 1]);
        }
        if let Some(cos) = cell.cosine_matrix() {
            for i in 0..NUM_CLASSES {
                for j in 0..NUM_CLASSES {
                    cos_rows.push(vec![nz.clone(), i.to_string(), j.to_string(), f(cos.row(i)[j])]);
                }
            }
        }
        let off = cell.mean_abs_off_diagonal.map(f).unwrap_or_default();
        summary_rows.push(vec![nz, status, off, d0, dmin, tstar, dt]);
        if let Some(ck) = &cell.checkpoint {
            out.files.push(ck.strip_prefix(&c.output_dir).unwrap_or(ck).display().to_string());
        }
    }
    out.csv("nz_curves.csv", &header(&["nz", "t", "d_concept"]), curve_rows)?;
    out.csv("nz_cosine.csv", &header(&["nz", "i", "j", "cosine"]), cos_rows)?;
    out.csv("nz_summary.csv", &header(&["nz", "status", "mean_abs_off_diagonal", "d0", "d_min", "t_min", "d_final"]), summary_rows)?;
    #[derive(Serialize)]
    struct Cells<'a> {
        cells: Vec<CellEntry<'a>>,
    }
    #[derive(Serialize)]
    struct CellEntry<'a> {
        latent_dim: usize,
        seed: u64,
        status: &'a CellStatus,
        checkpoint: Option<&'a Path>,
        mean_abs_off_diagonal: Option<f64>,
        config: &'a RunConfig,
    }
    let entries = cells
        .iter()
        .map(|cell| CellEntry {
            latent_dim: cell.config.latent_dim,
            seed: cell.config.seed,
            status: &cell.status,
            checkpoint: cell.checkpoint.as_deref(),
            mean_abs_off_diagonal: cell.mean_abs_off_diagonal,
            config: &cell.config,
        })
        .collect();
    write_manifest(&mut out, "sweep-nz", &c, Cells { cells: entries })
}

pub fn sweep_gen(c: RunConfig, nz_values: &[usize], lr_values: &[f64], batch_values: &[usize], epochs: usize) -> Result<(), Failure> {
    validate(&c)?;
    let train_set = load_train(&c)?;
    let test_set = load_test(&c)?;
    let mut out = OutDir::create(&c.output_dir)?;
    let table = generalization_sweep(&c, nz_values, lr_values, batch_values, epochs, &train_set, &test_set, c.workers)?;
    let rows = table.cells.iter().map(|cell| {
        let status = match &cell.status {
            CellStatus::Ok => "ok".to_string(),
            CellStatus::Diverged { .. } => "diverged".to_string(),
            CellStatus::Failed { .. } => "failed".to_string(),
        };
        vec![
            cell.latent_dim.to_string(),
            f(cell.learning_rate),
            cell.batch_size.to_string(),
            cell.epochs.to_string(),
            cell.seed.to_string(),
            status,
            cell.test_elbo.map(f).unwrap_or_default(),
        ]
    });
    out.csv("gen_cells.csv", &header(&["nz", "learning_rate", "batch_size", "epochs", "seed", "status", "test_elbo"]), rows)?;
    let rows = table.best.iter().map(|(nz, b)| {
        vec![nz.to_string(), b.map(f).unwrap_or_default(), b.map(|v| f(-v)).unwrap_or_default()]
    });
    out.csv("gen_best.csv", &header(&["nz", "best_test_elbo", "generalization_error"]), rows)?;
    write_manifest(&mut out, "sweep-gen", &c, &table)
}

pub fn classify(mut c: RunConfig, checkpoint_path: &Path, disc_path: Option<&Path>, disc_epochs: usize) -> Result<(), Failure> {
    let model = load_vae(&mut c, checkpoint_path)?;
    if let Some(p) = disc_path.filter(|p| !p.is_file()) {
        return Err(Failure::Usage(format!("discriminator {} not found", p.display())));
    }
    validate(&c)?;
    let train_set = load_train(&c)?;
    let test_set = load_test(&c)?;
    let mut out = OutDir::create(&c.output_dir)?;
    let disc = match disc_path {
        Some(p) => DiscriminatorModel::load(p)?,
        None => {
            let cfg = DiscriminatorConfig { epochs: disc_epochs, seed: c.stream(streams::DISCRIMINATOR), ..Default::default() };
            let full_train = repinf_core::data::load_mnist(&c.data_dir(), repinf_core::data::Split::Train).map_err(data_failure)?;
            let (d, _) = train_discriminator(&full_train, &cfg, |e| eprintln!("classifier epoch {}  loss {:.4}", e.epoch, e.train_loss))?;
            d.save(&out.path("discriminator.ckpt"), cfg.seed, disc_epochs)?;
            d
        }
    };
    let accuracy = disc.accuracy(&test_set)?;
    eprintln!("classifier test accuracy {accuracy:.4}");

    let trajs = run_batch(&model, &train_set, c.label, c.trials, c.p, c.steps, c.stream(streams::TRIALS), c.workers)?;
    let finals = classify_final_states(&disc, &trajs)?;
    let mut h = header(&["trial"]);
    h.extend(indexed("p", NUM_CLASSES));
    h.push("argmax".into());
    let rows = finals.trials.iter().zip(&finals.probabilities).zip(&finals.labels).map(|((t, p), l)| {
        let mut r = vec![t.to_string()];
        r.extend(p.iter().map(|&v| f(v as f64)));
        r.push(l.to_string());
        r
    });
    out.csv("final_states.csv", &h, rows)?;

    let concepts = build_concepts(&model, &train_set)?;
    let curves = trajs
        .iter()
        .filter(|t| t.valid)
        .map(|t| distance_trajectory(&t.z_seq, concepts.concept(c.label)))
        .collect::<Result<Vec<_>, _>>()?;
    let modal = finals.modal_label();
    let conditional = conditional_mean_trajectory(&curves, &finals.labels, c.label);
    if let Ok((kept, all)) = &conditional {
        let rows = kept.iter().zip(all).enumerate().map(|(t, (a, b))| vec![t.to_string(), f(*a), f(*b)]);
        out.csv("conditional.csv", &header(&["t", "success_mean", "all_mean"]), rows)?;
    }
    #[derive(Serialize)]
    struct Summary {
        test_accuracy: f64,
        trials: usize,
        modal_label: Option<u8>,
        modal_count: usize,
        kept_trials: usize,
    }
    let summary = Summary {
        test_accuracy: accuracy,
        trials: finals.labels.len(),
        modal_label: modal.map(|m| m.0),
        modal_count: modal.map_or(0, |m| m.1),
        kept_trials: finals.labels.iter().filter(|&&l| l == c.label).count(),
    };
    eprintln!("final states: {} of {} classified as {}", summary.kept_trials, summary.trials, c.label);
    out.json("summary.json", &summary)?;
    write_manifest(&mut out, "classify", &c, NoExtra {})
}

/// Mean cross-entropy on softmax outputs against fixed labels.
fn cross_entropy(labels: Vec<usize>) -> impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>) {
    move |y: &Tensor<f64>| {
        let n = labels.len() as f64;
        let mut dy = Tensor::zeros(y.shape().to_vec());
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            loss -= y.row(i)[l].ln() / n;
            dy.row_mut(i)[l] = -1.0 / (y.row(i)[l] * n);
        }
        (loss, dy)
    }
}

/// Same layer sequence as the digit classifier, shrunk to a 8x8 input.
fn small_classifier_objective(seed: u64) -> SequentialObjective<impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>)> {
    let mut rng = Rng::new(seed);
    let stack = Sequential::new(vec![
        Layer::Conv2d(Conv2d::new(1, 2, &mut rng)),
        Layer::activation(Activation::Relu),
        Layer::Conv2d(Conv2d::new(2, 3, &mut rng)),
        Layer::activation(Activation::Relu),
        Layer::MaxPool2d(MaxPool2d::new()),
        Layer::Dropout(Dropout::new(0.25).expect("valid rate")),
        Layer::flatten(),
        Layer::Dense(Dense::new(3 * 2 * 2, 5, &mut rng)),
        Layer::activation(Activation::Relu),
        Layer::Dropout(Dropout::new(0.5).expect("valid rate")),
        Layer::Dense(Dense::new(5, 10, &mut rng)),
        Layer::activation(Activation::Softmax),
    ]);
    let input = Tensor::from_fn([2, 1, 8, 8], |_| rng.uniform());
    let labels = vec![(rng.next_u64() % 10) as usize, (rng.next_u64() % 10) as usize];
    let mut obj = SequentialObjective::new(stack, input, cross_entropy(labels));
    obj.dropout_seed = Some(seed);
    obj
}

#[derive(Serialize)]
struct GradCheckEntry {
    model: &'static str,
    seed: u64,
    report: GradCheckReport,
}

pub const GRAD_STEP: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-3;

pub fn grad_check(out_dir: Option<&Path>, seeds: u64) -> Result<(), Failure> {
    let mut entries = Vec::new();
    for seed in 0..seeds {
        let report = check_gradients(&mut small_vae_objective(seed), GRAD_STEP, GRAD_TOLERANCE)?;
        entries.push(GradCheckEntry { model: "vae", seed, report });
        let report = check_gradients(&mut small_classifier_objective(seed), GRAD_STEP, GRAD_TOLERANCE)?;
        entries.push(GradCheckEntry { model: "classifier", seed, report });
    }
    for e in &entries {
        println!(
            "{:<10} seed {}  params {:>4}  max rel error {:.3e}  {}",
            e.model,
            e.seed,
            e.report.num_params,
            e.report.max_rel_error,
            if e.report.passed { "pass" } else { "FAIL" }
        );
    }
    if let Some(dir) = out_dir {
        let mut out = OutDir::create(dir)?;
        out.json("grad_check.json", &entries)?;
    }
    if entries.iter().all(|e| e.report.passed) {
        Ok(())
    } else {
        Err(Failure::Numerical("analytic gradients disagree with finite differences".into()))
    }
}
