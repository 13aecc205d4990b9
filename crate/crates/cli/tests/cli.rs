//! End-to-end runs of the `dllrnn` binary on a tiny configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dllrnn_core::framing::Waveform;
use dllrnn_core::wav::{read_wav, write_wav};
use tempfile::TempDir;

const TINY: &str = "\
# two-mic toy setup
channels = 2
hidden = 8
spatial = 2
blocks = 2
frame_in = 32
frame_out = 8
hop = 4
batch = 1
chunk_s = 0.1
epochs = 1000
lr = 0.002
sim_count = 2
sim_seconds = 0.25
sim_order = 1
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dllrnn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(extra: &str) -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("tiny.cfg"), format!("{TINY}{extra}")).unwrap();
        Self { dir }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).to_str().unwrap().to_string()
    }

    fn simulate(&self, out: &str, seed: u64) -> Output {
        run(&[
            "simulate",
            "--config",
            &self.s("tiny.cfg"),
            "--seed",
            &seed.to_string(),
            "--out",
            &self.s(out),
        ])
    }

    fn train(&self, data: &str, out: &str, extra: &[&str]) -> Output {
        let manifest = self.s(&format!("{data}/manifest.txt"));
        let cfg = self.s("tiny.cfg");
        let out = self.s(out);
        let mut args = vec!["train", "--config", &cfg, "--manifest", &manifest, "--out", &out];
        args.extend_from_slice(extra);
        run(&args)
    }
}

fn log_losses(path: &Path) -> Vec<(u64, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let field = |k: &str| l.split(' ').find_map(|f| f.strip_prefix(k)).unwrap().to_string();
            (field("step=").parse().unwrap(), field("loss=").parse().unwrap())
        })
        .collect()
}

fn strip_wall_time(log: &str) -> String {
    log.lines()
        .map(|l| l.split(" wall_s=").next().unwrap())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["simulate"]).status.code(), Some(1));
}

#[test]
fn simulate_zero_examples_writes_empty_manifest() {
    let f = Fixture::new("");
    let out = run(&[
        "simulate",
        "--config",
        &f.s("tiny.cfg"),
        "--count",
        "0",
        "--out",
        &f.s("data"),
    ]);
    ok(&out);
    assert_eq!(
        fs::read_to_string(f.p("data/manifest.txt")).unwrap(),
        "# dllrnn manifest v1\n"
    );
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let f = Fixture::new("");
    ok(&f.simulate("a", 5));
    ok(&f.simulate("b", 5));
    ok(&f.simulate("c", 6));
    let names = [
        "manifest.txt",
        "ex00000_mix.wav",
        "ex00000_direct.wav",
        "ex00001_mix.wav",
        "ex00001_direct.wav",
    ];
    for n in names {
        assert_eq!(
            fs::read(f.p(&format!("a/{n}"))).unwrap(),
            fs::read(f.p(&format!("b/{n}"))).unwrap(),
            "{n}"
        );
    }
    assert_ne!(
        fs::read(f.p("a/ex00000_mix.wav")).unwrap(),
        fs::read(f.p("c/ex00000_mix.wav")).unwrap()
    );
    let mix = read_wav(f.p("a/ex00000_mix.wav")).unwrap();
    assert_eq!(
        (mix.sample_rate, mix.waveform.num_channels(), mix.waveform.len()),
        (16000, 2, 4000)
    );
}

#[test]
fn simulate_rejects_invalid_ranges_naming_the_key() {
    let f = Fixture::new("sim_snr_db_min = 20\n");
    let out = f.simulate("data", 1);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("snr_db"), "{}", stderr(&out));
    let f = Fixture::new("sim_colour = blue\n");
    let out = f.simulate("data", 1);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown key `sim_colour`"), "{}", stderr(&out));
}

#[test]
fn train_smoke_run_decreases_loss() {
    let f = Fixture::new("");
    ok(&run(&[
        "simulate",
        "--config",
        &f.s("tiny.cfg"),
        "--count",
        "1",
        "--seed",
        "3",
        "--out",
        &f.s("data"),
    ]));
    ok(&f.train("data", "run", &["--max-steps", "50"]));
    let losses = log_losses(&f.p("run/train.log"));
    assert_eq!(losses.len(), 50);
    assert_eq!(losses[0].0, 1);
    assert_eq!(losses[49].0, 50);
    assert!(losses.iter().all(|(_, l)| l.is_finite()));
    let head: f64 = losses[..5].iter().map(|x| x.1).sum();
    let tail: f64 = losses[45..].iter().map(|x| x.1).sum();
    assert!(tail < head, "loss did not decrease: {head} -> {tail}");
    for name in ["checkpoint.bin", "opt_state.bin", "best.bin"] {
        assert!(f.p(&format!("run/{name}")).exists(), "{name}");
    }
}

#[test]
fn resume_continues_step_numbering_and_matches_uninterrupted_run() {
    let f = Fixture::new("");
    ok(&f.simulate("data", 4));
    ok(&f.train("data", "straight", &["--max-steps", "7"]));
    ok(&f.train("data", "split", &["--max-steps", "3"]));
    ok(&f.train("data", "split", &["--max-steps", "7", "--resume"]));
    let steps: Vec<u64> = log_losses(&f.p("split/train.log")).iter().map(|x| x.0).collect();
    assert_eq!(steps, (1..=7).collect::<Vec<_>>());
    assert_eq!(
        strip_wall_time(&fs::read_to_string(f.p("split/train.log")).unwrap()),
        strip_wall_time(&fs::read_to_string(f.p("straight/train.log")).unwrap())
    );
    assert_eq!(
        fs::read(f.p("split/checkpoint.bin")).unwrap(),
        fs::read(f.p("straight/checkpoint.bin")).unwrap()
    );
}

#[test]
fn train_rejects_channel_mismatch_and_missing_manifest() {
    let f = Fixture::new("");
    ok(&f.simulate("data", 1));
    fs::write(f.p("three.cfg"), TINY.replace("channels = 2", "channels = 3")).unwrap();
    let out = run(&[
        "train",
        "--config",
        &f.s("three.cfg"),
        "--manifest",
        &f.s("data/manifest.txt"),
        "--out",
        &f.s("run"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("channels = 3"), "{}", stderr(&out));

    let out = f.train("nowhere", "run", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("manifest.txt"), "{}", stderr(&out));
}

#[test]
fn resume_rejects_checkpoint_config_mismatch() {
    let f = Fixture::new("");
    ok(&f.simulate("data", 1));
    ok(&f.train("data", "run", &["--max-steps", "1"]));
    fs::write(f.p("tiny.cfg"), TINY.replace("hidden = 8", "hidden = 6")).unwrap();
    let out = f.train("data", "run", &["--resume", "--max-steps", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("checkpoint.bin"), "{}", stderr(&out));
}

#[test]
fn enhance_contract() {
    let f = Fixture::new("");
    ok(&f.simulate("data", 2));
    ok(&f.train("data", "run", &["--max-steps", "2"]));
    let ck = f.s("run/checkpoint.bin");
    let input = f.s("data/ex00000_mix.wav");
    ok(&run(&[
        "enhance",
        "--checkpoint",
        &ck,
        "--input",
        &input,
        "--out",
        &f.s("a.wav"),
    ]));
    ok(&run(&[
        "enhance",
        "--checkpoint",
        &ck,
        "--input",
        &input,
        "--out",
        &f.s("b.wav"),
    ]));
    ok(&run(&[
        "enhance",
        "--checkpoint",
        &ck,
        "--input",
        &input,
        "--out",
        &f.s("s.wav"),
        "--streaming",
    ]));
    let a = fs::read(f.p("a.wav")).unwrap();
    assert_eq!(a, fs::read(f.p("b.wav")).unwrap());
    assert_eq!(a, fs::read(f.p("s.wav")).unwrap());
    let out = read_wav(f.p("a.wav")).unwrap();
    let inp = read_wav(f.p("data/ex00000_mix.wav")).unwrap();
    assert_eq!(out.sample_rate, 16000);
    assert_eq!(out.waveform.num_channels(), 1);
    assert_eq!(out.waveform.len(), inp.waveform.len());

    write_wav(f.p("8k.wav"), &inp.waveform, 8000).unwrap();
    let r = run(&[
        "enhance",
        "--checkpoint",
        &ck,
        "--input",
        &f.s("8k.wav"),
        "--out",
        &f.s("x.wav"),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("8000 Hz"), "{}", stderr(&r));

    let mono = Waveform::mono(inp.waveform.channel(0).to_vec()).unwrap();
    write_wav(f.p("mono.wav"), &mono, 16000).unwrap();
    let r = run(&[
        "enhance",
        "--checkpoint",
        &ck,
        "--input",
        &f.s("mono.wav"),
        "--out",
        &f.s("x.wav"),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("1 channels"), "{}", stderr(&r));
}

#[test]
fn count_is_repeatable_and_lists_table_models() {
    let a = ok(&run(&["count"]));
    assert_eq!(a, ok(&run(&["count"])));
    assert!(a.contains("D-LL-RNN-64-8-8\t8\t458537"));
    assert_eq!(a.lines().filter(|l| l.starts_with("D-LL-RNN")).count(), 6);
    let b = ok(&run(&["count", "D-LL-RNN-32-8-8"]));
    assert!(b.contains("D-LL-RNN-32-8-8"));
    assert_eq!(run(&["count", "64-8"]).status.code(), Some(1));
}

#[test]
fn evaluate_baselines_and_failures() {
    let f = Fixture::new("");
    ok(&f.simulate("data", 7));
    let m = f.s("data/manifest.txt");
    let oracle = ok(&run(&["evaluate", "--manifest", &m, "--baseline", "oracle"]));
    for l in oracle.lines().filter(|l| l.starts_with("ex")) {
        assert_eq!(l.split('\t').nth(2).unwrap(), "80.0000", "{l}");
    }
    let identity = ok(&run(&[
        "evaluate",
        "--manifest",
        &m,
        "--baseline",
        "identity",
        "--out",
        &f.s("r.tsv"),
    ]));
    let mean: Vec<&str> = identity
        .lines()
        .find(|l| l.starts_with("mean"))
        .unwrap()
        .split('\t')
        .collect();
    assert_eq!(mean[1], mean[2]);
    assert_eq!(fs::read_to_string(f.p("r.tsv")).unwrap(), identity);

    fs::remove_file(f.p("data/ex00000_mix.wav")).unwrap();
    fs::remove_file(f.p("data/ex00000_direct.wav")).unwrap();
    let r = run(&["evaluate", "--manifest", &m, "--baseline", "identity"]);
    assert_eq!(r.status.code(), Some(2));
    let text = String::from_utf8(r.stdout).unwrap();
    assert!(
        text.contains("ex00000_mix.wav") && text.contains("ex00000_direct.wav"),
        "{text}"
    );
    assert!(text.lines().any(|l| l.starts_with("ex00001\t")), "{text}");
}

#[test]
fn simulate_from_wav_directories() {
    let f = Fixture::new("sim_speech_dir = speech\n");
    fs::create_dir(f.p("speech")).unwrap();
    let tone: Vec<f32> = (0..6000).map(|i| 0.3 * (i as f32 * 0.07).sin()).collect();
    write_wav(f.p("speech/a.wav"), &Waveform::mono(tone).unwrap(), 16000).unwrap();
    ok(&f.simulate("a", 2));
    ok(&f.simulate("b", 2));
    let mix = fs::read(f.p("a/ex00000_mix.wav")).unwrap();
    assert_eq!(mix, fs::read(f.p("b/ex00000_mix.wav")).unwrap());
    let synthetic = Fixture::new("");
    ok(&synthetic.simulate("a", 2));
    assert_ne!(mix, fs::read(synthetic.p("a/ex00000_mix.wav")).unwrap());

    let f = Fixture::new("sim_speech_dir = missing\n");
    assert_eq!(f.simulate("x", 1).status.code(), Some(2));
    let f = Fixture::new("sim_noise_dir = noise\n");
    assert_eq!(f.simulate("x", 1).status.code(), Some(1));
}

#[test]
fn unprocessed_mean_is_in_the_expected_band() {
    // published room, SNR and source ranges with 8 mics at image order 6
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("sim.cfg");
    fs::write(&cfg, "sim_count = 50\nsim_seconds = 1.0\n").unwrap();
    let data = dir.path().join("data");
    let cfg = cfg.to_str().unwrap();
    ok(&run(&[
        "simulate",
        "--config",
        cfg,
        "--seed",
        "2024",
        "--out",
        data.to_str().unwrap(),
    ]));
    let manifest = data.join("manifest.txt");
    let report = ok(&run(&[
        "evaluate",
        "--manifest",
        manifest.to_str().unwrap(),
        "--baseline",
        "identity",
    ]));
    let mean: f64 = report
        .lines()
        .find(|l| l.starts_with("mean"))
        .unwrap()
        .split('\t')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(report.lines().filter(|l| l.starts_with("ex")).count(), 50);
    assert!((-14.0..=-2.0).contains(&mean), "unprocessed mean {mean} dB");
}
