use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use semsplat::body::{pose_cloud, PriorTopology};
use semsplat::disentangle::{cluster_by_semantics, select_high_frequency_with, selection_csv};
use semsplat::graph::{
    build_graph, cosine_with_grad, random_walks, train_embeddings, NodeEmbeddings, SkipGramConfig,
};
use semsplat::io::cameras::{find_camera, read_cameras, Split};
use semsplat::io::config_file::{read_config, write_config};
use semsplat::io::graph_file::write_graph;
use semsplat::io::image::{read_rgb, write_gray, write_mask, write_rgb, RgbImage};
use semsplat::io::lineage::{lineage_path, read_lineage, write_lineage};
use semsplat::io::ply::{read_cloud, write_cloud};
use semsplat::metrics::{
    high_freq_csv, high_freq_figure, high_freq_maps, t_critical, two_sample_t_test,
};
use semsplat::optim::{evaluate_split, loss_log_csv, TrainConfig, TrainState, Trainer};
use semsplat::parts::{Part, NUM_PARTS};
use semsplat::render::{argmax_mask, render, DEFAULT_MASK_THRESHOLD};
use semsplat::synth::{
    generate_dataset, generate_template, load_dataset, perturbed_init, quantized_image,
    write_dataset, Proportions, RigSpec, CAMERAS_FILE,
};
use semsplat::{Error, GaussianCloud, Result};

#[derive(Parser)]
#[command(
    name = "semsplat",
    version,
    about = "Semantic Gaussian splatting of articulated bodies"
)]
struct Cli {
    /// Seed for every random choice; overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a capsule-person dataset.
    Generate(GenerateArgs),
    /// Fit a Gaussian cloud to a dataset.
    Train(TrainArgs),
    /// Render a cloud through one camera.
    Render(RenderArgs),
    /// Score trained runs and compare two of them.
    Evaluate(EvaluateArgs),
    /// Dump the inter-joint graph, embeddings and high-frequency selection.
    AnalyzeGraph(AnalyzeArgs),
    /// Canny and Fourier high-pass maps of result images.
    Highfreq(HighfreqArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    /// Keep every n-th frame of the underlying motion.
    #[arg(long, default_value_t = 3)]
    stride: usize,
    #[arg(long, default_value_t = 8)]
    cameras: usize,
    #[arg(long, default_value_t = 1)]
    train_cameras: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Ten comma-separated body proportions in [0.5, 2].
    #[arg(long, value_delimiter = ',')]
    proportions: Option<Vec<f64>>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Initial position noise as a fraction of body height.
    #[arg(long, default_value_t = 0.02)]
    init_noise: f64,
    /// Start from this cloud (with its lineage sidecar) instead of the template.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Independent runs with seeds seed, seed+1, ...; each in `trial_XX`.
    #[arg(long, default_value_t = 1)]
    trials: usize,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    camera: String,
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Dataset directory supplying cameras, template and poses.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pose the cloud with this dataset frame (index into the manifest order).
    #[arg(long)]
    frame: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Psnr,
    Ssim,
    Iou,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "psnr")]
    metric: Metric,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct HighfreqArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    images: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: usage: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Generate(a) => generate(a, seed.unwrap_or(0)),
        Command::Train(a) => train(a, seed),
        Command::Render(a) => render_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::AnalyzeGraph(a) => analyze(a, seed),
        Command::Highfreq(a) => highfreq(a),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn generate(a: GenerateArgs, seed: u64) -> CliResult<()> {
    let proportions = match a.proportions {
        Some(v) => {
            let arr: [f64; 10] = v.try_into().map_err(|v: Vec<f64>| {
                Failure::Usage(format!("--proportions needs 10 values, got {}", v.len()))
            })?;
            Proportions(arr)
        }
        None => Proportions::default(),
    };
    let template = generate_template(seed, &proportions)?;
    let rig = RigSpec {
        cameras: a.cameras,
        train_cameras: a.train_cameras,
        width: a.size,
        image_height: a.size,
        ..RigSpec::default()
    };
    let dataset = generate_dataset(&template, a.frames, a.stride, &rig, seed)?;
    write_dataset(&dataset, &a.out)?;
    println!(
        "wrote {} views of {} frames to {}",
        dataset.views.len(),
        dataset.poses.len(),
        a.out.display()
    );
    Ok(())
}

fn save_cloud(cloud: &GaussianCloud, lineage: &[usize], path: &Path) -> Result<()> {
    write_cloud(cloud, path)?;
    write_lineage(lineage, &lineage_path(path))
}

fn load_cloud(path: &Path) -> Result<(GaussianCloud, Option<Vec<usize>>)> {
    let cloud = read_cloud(path)?;
    let sidecar = lineage_path(path);
    let lineage = if sidecar.exists() {
        let l = read_lineage(&sidecar)?;
        if l.len() != cloud.len() {
            return Err(Error::InvalidInput(format!(
                "{} lists {} points, cloud has {}",
                sidecar.display(),
                l.len(),
                cloud.len()
            )));
        }
        Some(l)
    } else {
        None
    };
    Ok((cloud, lineage))
}

fn densify_csv(state: &TrainState) -> String {
    let mut s = String::from(
        "iteration,selected,pruned,points_before,points_after,inheritance_mismatches\n",
    );
    for e in &state.densify_events {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            e.iteration,
            e.selected,
            e.pruned,
            e.points_before,
            e.points_after,
            e.inheritance_mismatches
        );
    }
    s
}

fn train(a: TrainArgs, seed: Option<u64>) -> CliResult<()> {
    let mut config = match &a.config {
        Some(p) => read_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(n) = a.iterations {
        config.iterations = n;
    }
    config.validate()?;
    if a.trials == 0 {
        return Err(Failure::Usage("--trials must be at least 1".into()));
    }
    let dataset = load_dataset(&a.data)?;
    for trial in 0..a.trials {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(trial as u64);
        let dir = if a.trials == 1 {
            a.out.clone()
        } else {
            a.out.join(format!("trial_{trial:02}"))
        };
        create_dir(&dir)?;
        write_config(&cfg, &dir.join("config.cfg"))?;
        let (init, lineage) = match &a.init {
            Some(p) => load_cloud(p)?,
            None => (
                perturbed_init(&dataset.template, a.init_noise, cfg.seed),
                None,
            ),
        };
        let mut trainer = match lineage {
            Some(l) => {
                let state = TrainState::with_lineage(init, l, &cfg)?;
                Trainer::from_state(&dataset, state, cfg.clone())?
            }
            None => Trainer::new(&dataset, init, cfg.clone())?,
        };
        let ckpt_dir = dir.join("checkpoints");
        let mut checkpoint = |iteration: usize, state: &TrainState| -> Result<()> {
            create_dir(&ckpt_dir)?;
            save_cloud(
                &state.cloud,
                &state.lineage,
                &ckpt_dir.join(format!("iter_{iteration:05}.ply")),
            )
        };
        let outcome = trainer.run(&mut checkpoint);
        write_text(&dir.join("loss.csv"), &loss_log_csv(&trainer.state.log))?;
        write_text(&dir.join("densify.csv"), &densify_csv(&trainer.state))?;
        outcome?;
        let state = &trainer.state;
        save_cloud(&state.cloud, &state.lineage, &dir.join("final.ply"))?;
        for (split, name) in [
            (Split::Train, "metrics_train.csv"),
            (Split::Test, "metrics_test.csv"),
        ] {
            let report = evaluate_split(&state.cloud, &state.lineage, &dataset, split)?;
            write_text(&dir.join(name), &report.to_csv())?;
        }
        let last = state.log.last();
        println!(
            "{}: {} iterations, {} points, final loss {}",
            dir.display(),
            state.iteration,
            state.cloud.len(),
            last.map(|r| format!("{:.6}", r.total))
                .unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(())
}

fn render_cmd(a: RenderArgs) -> CliResult<()> {
    let (cloud, lineage) = load_cloud(&a.cloud)?;
    let cameras = match (&a.cameras, &a.data) {
        (Some(p), _) => read_cameras(p)?,
        (None, Some(d)) => read_cameras(&d.join(CAMERAS_FILE))?,
        (None, None) => return Err(Failure::Usage("give --cameras or --data".into())),
    };
    let camera = find_camera(&cameras, &a.camera)?.camera.clone();
    let posed = match a.frame {
        Some(frame) => {
            let Some(data) = &a.data else {
                return Err(Failure::Usage("--frame needs --data".into()));
            };
            let dataset = load_dataset(data)?;
            let pose = dataset.poses.get(frame).ok_or_else(|| {
                Error::InvalidArgument(format!("dataset has {} frames", dataset.poses.len()))
            })?;
            let lineage = match lineage {
                Some(l) => l,
                None if cloud.len() == dataset.template.vertices.len() => {
                    (0..cloud.len()).collect()
                }
                None => {
                    return Err(Error::InvalidInput(format!(
                        "{} is missing; it is needed to pose a densified cloud",
                        lineage_path(&a.cloud).display()
                    ))
                    .into())
                }
            };
            pose_cloud(&cloud, &dataset.template, &lineage, pose)?.cloud
        }
        None => cloud,
    };
    let out = render(&posed, &camera)?;
    write_rgb(&a.out, &quantized_image(&out))?;
    if let Some(m) = &a.mask {
        write_mask(
            m,
            out.width,
            out.height,
            &argmax_mask(&out, DEFAULT_MASK_THRESHOLD),
        )?;
    }
    Ok(())
}

/// Trial directories of a run: its `trial_*` children holding `final.ply`,
/// or the run itself.
fn trials_of(run: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(run).map_err(|e| Error::Io {
        path: run.to_path_buf(),
        source: e,
    })?;
    let mut trials: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("final.ply").exists())
        .collect();
    trials.sort();
    if trials.is_empty() && run.join("final.ply").exists() {
        trials.push(run.to_path_buf());
    }
    if trials.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} contains no trained cloud",
            run.display()
        )));
    }
    Ok(trials)
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let dataset = load_dataset(&a.data)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let metric_name = match a.metric {
        Metric::Psnr => "psnr",
        Metric::Ssim => "ssim",
        Metric::Iou => "iou",
    };
    let mut text = String::from("run,trial,psnr,ssim,iou\n");
    let mut samples: Vec<Vec<f64>> = Vec::new();
    for run in &a.runs {
        let mut values = Vec::new();
        for trial in trials_of(run)? {
            let (cloud, lineage) = load_cloud(&trial.join("final.ply"))?;
            let lineage = lineage.unwrap_or_else(|| (0..cloud.len()).collect());
            let report = evaluate_split(&cloud, &lineage, &dataset, split)?;
            let (p, s, i) = (report.mean_psnr(), report.mean_ssim(), report.mean_iou());
            let _ = writeln!(
                text,
                "{},{},{p:.6},{s:.6},{i:.6}",
                run.display(),
                trial.display()
            );
            values.push(match a.metric {
                Metric::Psnr => p,
                Metric::Ssim => s,
                Metric::Iou => i,
            });
        }
        samples.push(values);
    }
    let _ = writeln!(text);
    for (run, v) in a.runs.iter().zip(&samples) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let _ = writeln!(
            text,
            "{} {metric_name}: n = {}, mean = {mean:.6}, sd = {sd:.6}",
            run.display(),
            v.len()
        );
    }
    if samples.len() == 2 {
        let t = two_sample_t_test(&samples[0], &samples[1])?;
        let crit = t_critical(t.df, 0.05)?;
        let _ = writeln!(
            text,
            "two-sample t-test ({metric_name}): t = {:.6}, df = {}, p = {:.6e}, critical(0.05) = {crit:.6}",
            t.t, t.df, t.p
        );
    } else if samples.len() > 2 {
        return Err(Failure::Usage("--runs takes one or two runs".into()));
    }
    print!("{text}");
    if let Some(out) = &a.out {
        write_text(out, &text)?;
    }
    Ok(())
}

/// Mean cosine similarity between the embeddings of every pair of parts.
fn part_similarity(cloud: &GaussianCloud, emb: &NodeEmbeddings) -> String {
    let clusters = cluster_by_semantics(cloud);
    let means: BTreeMap<usize, Vec<f64>> = clusters
        .iter()
        .map(|(&part, members)| {
            let mut m = vec![0.0; emb.dim];
            for &i in members {
                for (a, b) in m.iter_mut().zip(emb.row(i)) {
                    *a += b / members.len() as f64;
                }
            }
            (part, m)
        })
        .collect();
    let topology = PriorTopology::canonical();
    let mut s = String::from("part_a,part_b,prior_related,cosine\n");
    for a in 0..NUM_PARTS {
        for b in a..NUM_PARTS {
            if let (Some(ma), Some(mb)) = (means.get(&a), means.get(&b)) {
                let (c, _, _) = cosine_with_grad(ma, mb);
                let _ = writeln!(
                    s,
                    "{},{},{},{c:.6}",
                    Part::ALL[a].name(),
                    Part::ALL[b].name(),
                    topology.related(a, b) as u8
                );
            }
        }
    }
    s
}

fn analyze(a: AnalyzeArgs, seed: Option<u64>) -> CliResult<()> {
    let mut config = match &a.config {
        Some(p) => read_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let (cloud, _) = load_cloud(&a.cloud)?;
    create_dir(&a.out)?;
    let graph = build_graph(&cloud, config.graph_k)?;
    let corpus = random_walks(
        &graph,
        config.walk_length,
        config.walks_per_node,
        config.seed,
    )?;
    let emb = train_embeddings(
        &corpus,
        &SkipGramConfig {
            dim: config.embed_dim,
            window: config.window,
            negatives: config.negatives,
            epochs: config.embed_epochs,
            learning_rate: config.embed_learning_rate,
            seed: config.seed,
        },
    )?;
    write_graph(&a.out.join("graph.ssgr"), &graph, Some(&emb))?;
    write_text(
        &a.out.join("part_similarity.csv"),
        &part_similarity(&cloud, &emb),
    )?;
    let selection = select_high_frequency_with(
        &cloud,
        &cluster_by_semantics(&cloud),
        config.top_fraction,
        config.highfreq_mode,
    )?;
    write_text(&a.out.join("selection.csv"), &selection_csv(&selection)?)?;
    println!(
        "{} nodes, {} edges, {} high-frequency nodes",
        graph.len(),
        graph.len() * graph.k,
        selection.len()
    );
    Ok(())
}

fn highfreq(a: HighfreqArgs) -> CliResult<()> {
    let images: Vec<RgbImage> = a
        .images
        .iter()
        .map(|p| read_rgb(p))
        .collect::<Result<_>>()?;
    let names: Vec<String> = a
        .images
        .iter()
        .map(|p| {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect();
    create_dir(&a.out)?;
    write_rgb(&a.out.join("figure.png"), &high_freq_figure(&images)?)?;
    write_text(&a.out.join("report.csv"), &high_freq_csv(&names, &images))?;
    for (i, (name, img)) in names.iter().zip(&images).enumerate() {
        let m = high_freq_maps(img);
        let edges: Vec<f64> = m.edges.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect();
        let stem = format!("{i:02}_{name}");
        write_gray(
            &a.out.join(format!("{stem}_edges.png")),
            m.width,
            m.height,
            &edges,
            1.0,
        )?;
        let peak = m.high_pass.iter().copied().fold(0.0f64, f64::max);
        write_gray(
            &a.out.join(format!("{stem}_highpass.png")),
            m.width,
            m.height,
            &m.high_pass,
            peak,
        )?;
    }
    Ok(())
}
