use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use polforge::attacks::{
    blindfold_topq_attack, infinitesimal_attack, infinitesimal_min_steps, interp_perturb_attack,
    rna_attack, BlindfoldParams, InfinitesimalParams, InterpParams, RnaParams, SPACING_MARGIN,
};
use polforge::bounds::{
    mc_validate_tail, mc_validate_tail_blocks, query_lower_bound, stability_zeta, tail_blocks_csv,
    tail_grid, CostDistributionSpec, QueryBound,
};
use polforge::harness::{run, ExperimentId, ExperimentSpec};
use polforge::proofchain::{
    chain_digest, deserialize, serialize, CommitmentLedger, Proof, SystemClock,
};
use polforge::tinytrain::{gen_dataset, init_model, train, Dataset, DatasetSpec, TrainConfig};
use polforge::verifier::{verify, VerificationPolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "polforge",
    version,
    about = "Proof-of-learning generation, verification and spoofing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML config and write the proof plus its data store.
    Prove {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Timestamp a proof digest in an append-only ledger file.
    Commit {
        #[arg(long)]
        proof: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long, default_value = "")]
        label: String,
    },
    /// Verify a proof under a TOML policy.
    Verify {
        #[arg(long)]
        proof: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Data store; defaults to `<proof>.data.json`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Reference distance for normalized errors.
        #[arg(long)]
        rd: Option<f64>,
        /// Overrides the policy's Q.
        #[arg(long)]
        q: Option<usize>,
        /// Per-step CSV; defaults to `<proof>.report.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Forge a proof ending at a victim proof's final weights.
    Attack {
        #[arg(long, value_enum)]
        kind: AttackKind,
        #[arg(long)]
        victim: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Data the adversary draws rows from; defaults to `<victim>.data.json`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Threshold the spoof targets (inf, interp).
        #[arg(long, default_value_t = 0.008)]
        delta: f64,
        /// Proof length in steps (inf, interp); the minimum when omitted for inf.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 5)]
        q: usize,
        #[arg(long, default_value_t = 100)]
        s: usize,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        #[arg(long, default_value_t = 1.0)]
        eta_large: f64,
        #[arg(long, default_value_t = 10)]
        n_iter: usize,
        #[arg(long, default_value_t = 0.5)]
        input_lr: f64,
        #[arg(long, default_value_t = 10)]
        rounds: usize,
        #[arg(long, default_value_t = 10)]
        m: usize,
        /// Learning rate for interp and rna steps.
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 10)]
        batch_size: usize,
    },
    /// Evaluate the cost bounds and optionally validate the tail inequality.
    Bounds {
        #[arg(long, value_enum)]
        lemma: Lemma,
        #[arg(long)]
        e: f64,
        #[arg(long)]
        c: f64,
        /// Variance of honest cost.
        #[arg(long, default_value_t = 0.0)]
        var: f64,
        /// Variance of the cheap algorithm's cost (stability only).
        #[arg(long, default_value_t = 0.0)]
        var_f: f64,
        /// `lognormal:MU,SIGMA`, `gamma:SHAPE,SCALE`, `point:VALUE`, or `grid`
        /// for every built-in kind over a 3x3 (c, variance) grid; `--c` is
        /// then ignored.
        #[arg(long)]
        validate: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 10)]
        blocks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one experiment and write its CSVs and summary.json.
    Run {
        #[arg(long)]
        exp: String,
        /// TOML spec or earlier summary.json; desk defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackKind {
    Inf,
    Blindfold,
    Interp,
    Rna,
}

#[derive(Clone, Copy, ValueEnum)]
enum Lemma {
    Stability,
    Queries,
}

#[derive(Deserialize)]
struct ProveConfig {
    data: DataSection,
    train: TrainConfig,
    k: usize,
}

#[derive(Deserialize)]
struct DataSection {
    #[serde(flatten)]
    spec: DatasetSpec,
    seed: u64,
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_proof(path: &Path) -> Result<Proof> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(deserialize(&bytes)?)
}

fn read_store(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading data store {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_proof(path: &Path, proof: &Proof, store: &Dataset) -> Result<()> {
    std::fs::write(path, serialize(proof))?;
    std::fs::write(sidecar(path, ".data.json"), serde_json::to_string(store)?)?;
    Ok(())
}

fn prove(config: &Path, out: &Path) -> Result<ExitCode> {
    let cfg: ProveConfig = toml::from_str(&std::fs::read_to_string(config)?)?;
    let data = gen_dataset(cfg.data.seed, &cfg.data.spec)?;
    let run = train(&cfg.train, &data)?;
    let proof = Proof::from_run(&run, &data, cfg.k)?;
    write_proof(out, &proof, &data)?;
    println!("steps: {}", proof.total_steps());
    println!("checkpoints: {}", proof.total_steps() / proof.k() + 1);
    println!("digest: {}", hex::encode(chain_digest(&proof)));
    println!("cost: {}", run.ledger);
    Ok(ExitCode::SUCCESS)
}

fn commit(proof: &Path, ledger_path: &Path, label: &str) -> Result<ExitCode> {
    let proof = read_proof(proof)?;
    let mut ledger = CommitmentLedger::load(ledger_path)?;
    if ledger.detect_replay(&proof) {
        eprintln!(
            "replay: digest {} is already committed",
            hex::encode(chain_digest(&proof))
        );
        return Ok(ExitCode::from(2));
    }
    let entry = ledger.commit_with_clock(&proof, &SystemClock, label)?;
    CommitmentLedger::append_to_file(ledger_path, &entry)?;
    println!("{}", entry.to_line());
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(
    proof_path: &Path,
    policy: &Path,
    data: Option<PathBuf>,
    rd: Option<f64>,
    q: Option<usize>,
    csv: Option<PathBuf>,
) -> Result<ExitCode> {
    let proof = read_proof(proof_path)?;
    let mut policy: VerificationPolicy = toml::from_str(&std::fs::read_to_string(policy)?)?;
    if let Some(q) = q {
        policy.q = q;
    }
    let store = read_store(&data.unwrap_or_else(|| sidecar(proof_path, ".data.json")))?;
    let report = verify(&proof, &policy, &store, rd)?;
    let csv = csv.unwrap_or_else(|| sidecar(proof_path, ".report.csv"));
    std::fs::write(&csv, report.to_csv())?;
    print!("{}", report.summary());
    println!("per-step report: {}", csv.display());
    Ok(if report.is_valid() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

#[allow(clippy::too_many_arguments)]
fn attack(
    kind: AttackKind,
    victim: &Path,
    out: &Path,
    data: Option<PathBuf>,
    seed: u64,
    k: usize,
    delta: f64,
    steps: Option<usize>,
    blind: (usize, usize, usize, f64),
    interp: (usize, f64),
    rna: (usize, usize),
    lr: f64,
    batch_size: usize,
) -> Result<ExitCode> {
    let proof = read_proof(victim)?;
    let store = read_store(&data.unwrap_or_else(|| sidecar(victim, ".data.json")))?;
    let w_t = proof.final_state();
    let w0 = init_model(*w_t.arch(), seed ^ 0x5f00f, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spoof = match kind {
        AttackKind::Inf => {
            let t = match steps {
                Some(t) => t,
                None => infinitesimal_min_steps(w_t, &w0, k, delta, SPACING_MARGIN)?,
            };
            infinitesimal_attack(
                w_t,
                &w0,
                &InfinitesimalParams::new(t, k, delta, batch_size),
                &store,
                &mut rng,
            )?
        }
        AttackKind::Blindfold => {
            let (q, s, epochs, eta_large) = blind;
            let p = BlindfoldParams {
                q,
                k,
                s,
                epochs,
                eta_large,
                batch_size,
            };
            blindfold_topq_attack(w_t, &w0, &p, &store, &mut rng)?
        }
        AttackKind::Interp => {
            let p = InterpParams {
                total_steps: steps.unwrap_or(4 * k),
                k,
                delta,
                n_iter: interp.0,
                batch_size,
                lr,
                input_lr: interp.1,
            };
            let s = interp_perturb_attack(w_t, &w0, &p, &store, &mut rng)?;
            println!("failed updates: {:?}", s.failed_steps);
            s
        }
        AttackKind::Rna => {
            let (rounds, m) = rna;
            let p = RnaParams {
                rounds,
                m,
                lr,
                batch_size,
            };
            let r = rna_attack(w_t, &w0, &p, &store, &mut rng)?;
            write_proof(out, &r.candidate, &r.store)?;
            let mut csv = String::from("round,distance\n");
            for (i, d) in r.distance_curve.iter().enumerate() {
                csv.push_str(&format!("{i},{d:e}\n"));
            }
            std::fs::write(sidecar(out, ".distance.csv"), csv)?;
            println!("final distance to victim: {:e}", r.final_distance());
            println!("cost: {}", r.ledger);
            return Ok(ExitCode::SUCCESS);
        }
    };
    write_proof(out, &spoof.proof, &spoof.store)?;
    println!("attack: {}", spoof.attack.name());
    println!("steps: {}", spoof.proof.total_steps());
    println!("cost: {}", spoof.ledger);
    println!("cost per update: {}", spoof.cost_per_update());
    Ok(ExitCode::SUCCESS)
}

fn parse_dist(s: &str) -> Result<CostDistributionSpec> {
    let (kind, args) = s.split_once(':').unwrap_or((s, ""));
    let nums = args
        .split(',')
        .filter(|a| !a.is_empty())
        .map(|a| a.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(match (kind, nums.as_slice()) {
        ("lognormal", [mu, sigma]) => CostDistributionSpec::Lognormal {
            mu: *mu,
            sigma: *sigma,
        },
        ("gamma", [shape, scale]) => CostDistributionSpec::Gamma {
            shape: *shape,
            scale: *scale,
        },
        ("point", [value]) => CostDistributionSpec::PointMass { value: *value },
        _ => bail!("cannot parse distribution {s:?}"),
    })
}

#[allow(clippy::too_many_arguments)]
fn bounds(
    lemma: Lemma,
    e: f64,
    c: f64,
    var: f64,
    var_f: f64,
    validate: Option<String>,
    trials: usize,
    blocks: usize,
    seed: u64,
) -> Result<ExitCode> {
    match lemma {
        Lemma::Stability => {
            let b = stability_zeta(var, e, c, var_f)?;
            println!("a = {}", b.a);
            println!("zeta = {}", b.zeta);
            if b.vacuous {
                println!("bound is vacuous");
            }
        }
        Lemma::Queries => match query_lower_bound(var, e, c)? {
            QueryBound::Finite { n, p } => println!("P = {p}\nN = {n}"),
            QueryBound::Unbounded => println!("P = 0\nN = unbounded"),
            QueryBound::Vacuous { p } => println!("P = {p}\nbound is vacuous"),
        },
    }
    if validate.as_deref() == Some("grid") {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut all = true;
        println!("kind,c,variance,empirical_P,bound_P,holds");
        for (kind, c, var, dist) in tail_grid()? {
            let t = mc_validate_tail(&dist, c, trials, &mut rng)?;
            all &= t.holds;
            println!(
                "{},{c},{var},{:e},{:e},{}",
                kind.name(),
                t.empirical_p,
                t.bound_p,
                t.holds
            );
        }
        return Ok(if all {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(2)
        });
    }
    if let Some(d) = validate {
        let dist = parse_dist(&d)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let checks = mc_validate_tail_blocks(&dist, c, blocks, trials, &mut rng)?;
        print!("{}", tail_blocks_csv(&checks));
        if !checks.iter().all(|c| c.holds) {
            return Ok(ExitCode::from(2));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_cmd(exp: &str, config: Option<PathBuf>, out: &Path) -> Result<ExitCode> {
    let id = ExperimentId::parse(exp)?;
    let mut spec = match config {
        Some(p) => ExperimentSpec::load(&p)?,
        None => ExperimentSpec::desk_default(id),
    };
    if spec.id != id {
        bail!("config describes {}, not {}", spec.id.name(), id.name());
    }
    spec.out_dir = out.to_path_buf();
    let outcome = run(&spec, out)?;
    for c in &outcome.checks {
        println!(
            "[{}] {} {}",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!("wrote {} files to {}", outcome.files.len(), out.display());
    Ok(if outcome.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Prove { config, out } => prove(&config, &out),
        Command::Commit {
            proof,
            ledger,
            label,
        } => commit(&proof, &ledger, &label),
        Command::Verify {
            proof,
            policy,
            data,
            rd,
            q,
            csv,
        } => verify_cmd(&proof, &policy, data, rd, q, csv),
        Command::Attack {
            kind,
            victim,
            out,
            data,
            seed,
            k,
            delta,
            steps,
            q,
            s,
            epochs,
            eta_large,
            n_iter,
            input_lr,
            rounds,
            m,
            lr,
            batch_size,
        } => attack(
            kind,
            &victim,
            &out,
            data,
            seed,
            k,
            delta,
            steps,
            (q, s, epochs, eta_large),
            (n_iter, input_lr),
            (rounds, m),
            lr,
            batch_size,
        ),
        Command::Bounds {
            lemma,
            e,
            c,
            var,
            var_f,
            validate,
            trials,
            blocks,
            seed,
        } => bounds(lemma, e, c, var, var_f, validate, trials, blocks, seed),
        Command::Run { exp, config, out } => run_cmd(&exp, config, out.as_path()),
    }
}
