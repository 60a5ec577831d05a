//! Experiment drivers behind the `nomore` binary.
//!
//! Every command is a pure function of (config, seed): reruns produce
//! byte-identical output files. Wall-clock timing, which cannot be
//! deterministic, is only measured and written under `--bench`, into its
//! own file.

pub mod assertions;
pub mod config;
pub mod dataset;
pub mod noise_sim;
pub mod report;
pub mod svg;
pub mod train;

use std::path::PathBuf;

use nomore_core::variance::{probe_variance, DepthProbeConfig, ProbeWrapper};

use config::{Command, DatasetSpec, ExperimentConfig};
use report::{fmt_f64, out_file, prepare_out_dir, write_csv, write_text};

pub type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Run one command, returning the files written.
pub fn execute(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    prepare_out_dir(&cfg.out_dir)?;
    match cfg.command {
        Command::NoiseSim => run_noise_sim_cmd(cfg),
        Command::Assertions => run_assertions_cmd(cfg),
        Command::Variance => run_variance_cmd(cfg),
        Command::TrainCompare => run_train_compare_cmd(cfg),
        Command::Sensitivity => run_sensitivity_cmd(cfg),
    }
}

fn run_noise_sim_cmd(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let report = noise_sim::run_noise_sim(cfg)?;
    let csv_path = out_file(cfg, "delta", "csv");
    let mut header: Vec<String> = vec!["rep".into(), "class".into(), "composition_hash".into()];
    for k in 0..report.dim {
        header.push(format!("delta_{k}"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows: Vec<Vec<String>> = report
        .samples
        .iter()
        .enumerate()
        .map(|(rep, s)| {
            let mut row = vec![
                rep.to_string(),
                s.fixed_class.to_string(),
                format!("{:016x}", s.composition.content_hash()),
            ];
            row.extend(s.delta.iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    write_csv(&csv_path, &header_refs, &rows)?;

    let mut body = String::new();
    body.push_str(&format!(
        "noise simulation: B={}, K={}, d={}\n",
        report.batch, report.reps, report.dim
    ));
    body.push_str("dim  closed_mean      empirical_mean   closed_var       empirical_var\n");
    for k in 0..report.dim {
        body.push_str(&format!(
            "{k:<4} {:<16} {:<16} {:<16} {}\n",
            fmt_f64(report.closed_mean[k]),
            fmt_f64(report.empirical_mean[k]),
            fmt_f64(report.closed_var[k]),
            fmt_f64(report.empirical_var[k]),
        ));
    }
    body.push_str(&format!(
        "max variance relative error: {}\nmax |mean| in standard errors: {}\n",
        fmt_f64(report.max_var_rel_error),
        fmt_f64(report.max_mean_se)
    ));
    let txt_path = out_file(cfg, "summary", "txt");
    write_text(&txt_path, &body)?;
    Ok(vec![csv_path, txt_path])
}

fn run_assertions_cmd(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let report = assertions::run_assertions(cfg)?;

    let a1_path = out_file(cfg, "assertion1", "csv");
    let rows: Vec<Vec<String>> = report
        .a1_runs
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                fmt_f64(r.p_value),
                fmt_f64(r.diff_variance),
                fmt_f64(r.expected_variance),
                r.pairs.to_string(),
            ]
        })
        .collect();
    write_csv(
        &a1_path,
        &["seed", "p_value", "diff_variance", "expected_variance", "pairs"],
        &rows,
    )?;

    let a2_path = out_file(cfg, "assertion2", "csv");
    let rows: Vec<Vec<String>> = report
        .a2_table
        .iter()
        .map(|r| {
            vec![
                r.companion_class.to_string(),
                r.is_self.to_string(),
                fmt_f64(r.p_value),
                r.significant_05.to_string(),
                r.significant_01.to_string(),
            ]
        })
        .collect();
    write_csv(
        &a2_path,
        &["companion_class", "is_self", "p_value", "significant_05", "significant_01"],
        &rows,
    )?;

    let mut body = String::new();
    body.push_str(&format!(
        "assertion tests: B={}, K={}, d={}\n\n", report.batch, report.reps, report.dim
    ));
    body.push_str(&format!(
        "assertion 1 (intra-noise zero mean): p > 0.05 in {:.1}% of {} runs\n",
        report.a1_pass_rate * 100.0,
        report.a1_runs.len()
    ));
    body.push_str("\nassertion 2 p-value table (companions all from one class):\n");
    body.push_str("class      p-value      verdict\n");
    for row in &report.a2_table {
        let tag = if row.is_self { " (self)" } else { "" };
        let verdict = if row.significant_01 {
            "highly significant"
        } else if row.significant_05 {
            "significant"
        } else {
            "not significant"
        };
        body.push_str(&format!(
            "{:<10} {:<12.4} {verdict}\n",
            format!("{}{tag}", row.companion_class),
            row.p_value
        ));
    }
    if let Some(note) = &report.a2_note {
        body.push_str(&format!("note: {note}\n"));
    }
    if let Some(a3) = &report.a3 {
        body.push_str(&format!(
            "\nassertion 3 (decomposition): centroid id accuracy {:.3}, between/within scatter {:.2}\n",
            a3.centroid_accuracy, a3.scatter_ratio
        ));
    }
    let txt_path = out_file(cfg, "summary", "txt");
    write_text(&txt_path, &body)?;
    Ok(vec![a1_path, a2_path, txt_path])
}

fn run_variance_cmd(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let wrappers = [
        ProbeWrapper::Unnormalized,
        ProbeWrapper::Normalized,
        ProbeWrapper::SkipInit,
        ProbeWrapper::NoMore,
    ];
    let mut rows = Vec::new();
    let mut series_data: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let mut body = String::from("variance propagation at init\n");
    for wrapper in wrappers {
        let probe = DepthProbeConfig {
            depth: cfg.probe_depth,
            width: cfg.probe_width,
            batch: cfg.probe_batch,
            trials: cfg.probe_trials,
            wrapper,
            rng_seed: cfg.seed,
        };
        let profile = probe_variance(&probe)?;
        for (i, &(l, v)) in profile.per_block_variance.iter().enumerate() {
            rows.push(vec![
                wrapper.name().to_string(),
                l.to_string(),
                fmt_f64(v),
                fmt_f64(profile.var_std[i]),
                profile.trials.to_string(),
                profile.seed.to_string(),
            ]);
        }
        series_data.push((
            wrapper.name().to_string(),
            profile.per_block_variance.iter().map(|&(l, v)| (l as f64, v)).collect(),
        ));
        body.push_str(&format!(
            "{}: exp base {:.3}, linear slope {:.3}, better fit: {:?}\n",
            wrapper.name(),
            profile.fit.exp_base,
            profile.fit.lin_slope,
            profile.fit.label
        ));
    }
    let csv_path = out_file(cfg, "profile", "csv");
    write_csv(&csv_path, &["wrapper", "l", "var_mean", "var_std", "trials", "seed"], &rows)?;
    let svg_path = out_file(cfg, "profile", "svg");
    let series: Vec<svg::Series<'_>> = series_data
        .iter()
        .map(|(name, points)| svg::Series { name, points })
        .collect();
    svg::line_chart(&svg_path, "activation variance by depth", "block", "variance", &series, false)?;
    let txt_path = out_file(cfg, "summary", "txt");
    write_text(&txt_path, &body)?;
    Ok(vec![csv_path, svg_path, txt_path])
}

fn load_datasets(cfg: &ExperimentConfig) -> CliResult<(dataset::Dataset, dataset::Dataset, Vec<PathBuf>)> {
    match &cfg.dataset {
        DatasetSpec::Synthetic => {
            let (train, test) = dataset::gen_antipodal_dataset(
                cfg.classes,
                cfg.dim,
                cfg.separation,
                cfg.sigma,
                cfg.train_n,
                cfg.test_n,
                &nomore_core::Rng::new(cfg.seed),
            )?;
            let train_path = out_file(cfg, "train", "ds");
            let test_path = out_file(cfg, "test", "ds");
            train.save(&train_path)?;
            test.save(&test_path)?;
            Ok((train, test, vec![train_path, test_path]))
        }
        DatasetSpec::Cifar10 { path } => {
            let full = dataset::load_cifar10_binary(std::path::Path::new(path), cfg.cifar_subset, cfg.seed)?;
            // Deterministic 80/20 split of the balanced subset.
            let split = full.n * 4 / 5;
            let train = dataset::Dataset {
                features: full.features[..split * full.dim].to_vec(),
                labels: full.labels[..split].to_vec(),
                n: split,
                dim: full.dim,
                num_classes: full.num_classes,
            };
            let test = dataset::Dataset {
                features: full.features[split * full.dim..].to_vec(),
                labels: full.labels[split..].to_vec(),
                n: full.n - split,
                dim: full.dim,
                num_classes: full.num_classes,
            };
            Ok((train, test, Vec::new()))
        }
    }
}

fn curves_rows(summaries: &[train::WrapperSummary], eval_every: usize) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for summary in summaries {
        for run in &summary.runs {
            for (i, (&loss, &acc)) in
                run.train_loss.iter().zip(&run.test_accuracy).enumerate()
            {
                rows.push(vec![
                    summary.wrapper.name().to_string(),
                    fmt_f64(summary.gamma_noise),
                    run.seed.to_string(),
                    (((i + 1) * eval_every).min(run.steps_run)).to_string(),
                    fmt_f64(loss),
                    fmt_f64(acc),
                ]);
            }
        }
    }
    rows
}

fn summary_rows(summaries: &[train::WrapperSummary]) -> Vec<Vec<String>> {
    summaries
        .iter()
        .map(|s| {
            vec![
                s.wrapper.name().to_string(),
                fmt_f64(s.gamma_noise),
                fmt_f64(s.mean_accuracy),
                fmt_f64(s.std_accuracy),
                s.excluded_runs.to_string(),
                s.runs.len().to_string(),
            ]
        })
        .collect()
}

fn run_train_compare_cmd(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let (train, test, mut files) = load_datasets(cfg)?;
    let summaries = train::run_train_compare(cfg, &train, &test)?;
    let settings = train::TrainSettings::from_config(cfg);

    let curves_path = out_file(cfg, "curves", "csv");
    write_csv(
        &curves_path,
        &["wrapper", "gamma_noise", "seed", "step", "train_loss", "test_accuracy"],
        &curves_rows(&summaries, settings.eval_every),
    )?;
    files.push(curves_path);

    let summary_path = out_file(cfg, "accuracy", "csv");
    write_csv(
        &summary_path,
        &["wrapper", "gamma_noise", "mean_accuracy", "std_accuracy", "excluded_runs", "runs"],
        &summary_rows(&summaries),
    )?;
    files.push(summary_path);

    let mut body = String::from("paired training comparison\n");
    for s in &summaries {
        body.push_str(&format!(
            "{:<9} gamma={:<8} accuracy {:.4} +- {:.4} over {} seeds ({} excluded)\n",
            s.wrapper.name(),
            s.gamma_noise,
            s.mean_accuracy,
            s.std_accuracy,
            s.runs.len(),
            s.excluded_runs
        ));
    }
    if cfg.bench {
        let timing_path = out_file(cfg, "timing", "csv");
        let rows: Vec<Vec<String>> = summaries
            .iter()
            .map(|s| {
                vec![
                    s.wrapper.name().to_string(),
                    s.median_step_ms.map(fmt_f64).unwrap_or_default(),
                    s.speedup_ratio.map(fmt_f64).unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(&timing_path, &["wrapper", "median_step_ms", "speedup_ratio"], &rows)?;
        files.push(timing_path);
        for s in &summaries {
            if let (Some(ms), Some(ratio)) = (s.median_step_ms, s.speedup_ratio) {
                body.push_str(&format!(
                    "{:<9} median step {:.3} ms, speedup vs bn {:.3}x\n",
                    s.wrapper.name(),
                    ms,
                    ratio
                ));
            }
        }
    }
    let txt_path = out_file(cfg, "summary", "txt");
    write_text(&txt_path, &body)?;
    files.push(txt_path);
    Ok(files)
}

fn run_sensitivity_cmd(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    if cfg.gammas.len() < 2 {
        return Err(Box::new(config::ConfigError("sensitivity needs at least 2 gammas".into())));
    }
    let (train, test, mut files) = load_datasets(cfg)?;
    let summaries = train::run_sensitivity(cfg, &train, &test)?;

    let csv_path = out_file(cfg, "accuracy", "csv");
    let mut rows = Vec::new();
    for s in &summaries {
        for run in &s.runs {
            rows.push(vec![
                fmt_f64(s.gamma_noise),
                run.seed.to_string(),
                fmt_f64(run.final_accuracy),
                run.diverged.to_string(),
            ]);
        }
        rows.push(vec![
            fmt_f64(s.gamma_noise),
            "mean".to_string(),
            fmt_f64(s.mean_accuracy),
            s.excluded_runs.to_string(),
        ]);
    }
    write_csv(&csv_path, &["gamma_noise", "seed", "test_accuracy", "diverged"], &rows)?;
    files.push(csv_path);

    let points: Vec<(f64, f64)> =
        summaries.iter().map(|s| (s.gamma_noise, s.mean_accuracy)).collect();
    let svg_path = out_file(cfg, "curve", "svg");
    svg::line_chart(
        &svg_path,
        "accuracy vs noise amplitude",
        "gamma (log scale)",
        "test accuracy",
        &[svg::Series { name: "nomore", points: &points }],
        true,
    )?;
    files.push(svg_path);

    let mut body = String::from("noise-amplitude sensitivity (NoMore wrapper)\n");
    for s in &summaries {
        body.push_str(&format!(
            "gamma={:<10} accuracy {:.4} +- {:.4} ({} excluded)\n",
            format!("{:e}", s.gamma_noise),
            s.mean_accuracy,
            s.std_accuracy,
            s.excluded_runs
        ));
    }
    let best = summaries
        .iter()
        .max_by(|a, b| a.mean_accuracy.partial_cmp(&b.mean_accuracy).unwrap())
        .expect("non-empty");
    body.push_str(&format!("peak at gamma={:e}\n", best.gamma_noise));
    let txt_path = out_file(cfg, "summary", "txt");
    write_text(&txt_path, &body)?;
    files.push(txt_path);
    Ok(files)
}
