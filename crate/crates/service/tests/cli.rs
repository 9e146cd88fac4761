mod common;

use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use common::*;
use phylogrid_core::seqio::{parse_any, to_nexus};
use serde_json::json;

fn phylogrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phylogrid"))
        .args(args)
        .env_remove("PHYLOGRID_USER")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn count_trees() {
    let o = phylogrid(&["count-trees", "30"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "8687364368561751199826958100282265625\n≈8.69e36\n");
    assert_eq!(phylogrid(&["count-trees", "3"]).status.code(), Some(0));
    assert_eq!(phylogrid(&["count-trees", "2"]).status.code(), Some(1));
    assert_eq!(phylogrid(&["count-trees", "many"]).status.code(), Some(1));
}

#[test]
fn usage_errors() {
    assert_eq!(phylogrid(&[]).status.code(), Some(1));
    assert_eq!(phylogrid(&["convert"]).status.code(), Some(1));
    assert_eq!(phylogrid(&["run", "x.nex"]).status.code(), Some(1));
    assert_eq!(phylogrid(&["--version"]).status.code(), Some(0));
}

#[test]
fn convert() {
    let dir = tempfile::tempdir().unwrap();
    let phy = "3 4\nalpha ACGT\nbeta  AC-T\ngamma ACGA\n";
    let input = write(dir.path(), "in.phy", phy);
    let o = phylogrid(&["convert", &input, "--to", "nexus"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), to_nexus(phy).unwrap());
    let out = dir.path().join("out.nex");
    let o = phylogrid(&["convert", &input, "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(&out).unwrap(), to_nexus(phy).unwrap());
    let o = phylogrid(&["convert", &input, "--to", "fasta"]);
    assert!(stdout(&o).starts_with(">alpha\nACGT\n"));

    let bad = write(dir.path(), "bad.fa", ">a\nACGT\n>b\nAC#T\n");
    let o = phylogrid(&["convert", &bad, "--to", "nexus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
    let ragged = write(dir.path(), "ragged.fa", ">a\nACGT\n>b\nAC\n");
    assert_eq!(phylogrid(&["convert", &ragged]).status.code(), Some(2));
    assert_eq!(phylogrid(&["convert", "/no/such/file"]).status.code(), Some(2));
}

#[test]
fn align() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "u.fa", PRIMATES_UNALIGNED);
    let o = phylogrid(&["align", &input, "--match", "2", "--mismatch", "-1", "--gap-open", "-4", "--gap-extend", "-1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (_, a) = parse_any(&stdout(&o)).unwrap();
    assert!(a.is_aligned());
    let (_, u) = parse_any(PRIMATES_UNALIGNED).unwrap();
    for (x, y) in a.records().iter().zip(u.records()) {
        assert_eq!((x.id.as_str(), x.ungapped()), (y.id.as_str(), y.ungapped()));
    }
    assert!(stderr(&o).contains("mean conservation"));
    assert_eq!(phylogrid(&["align", &input, "--gap-open", "3"]).status.code(), Some(1));
}

#[test]
fn run_and_consensus() {
    let dir = tempfile::tempdir().unwrap();
    let nex = write(dir.path(), "primates.nex", &to_nexus(PRIMATES).unwrap());
    let out = dir.path().join("out");
    let o = phylogrid(&[
        "run", &nex, "--lset", "lset nst=6 rates=gamma;", "--ngen", "1000", "--samplefreq", "100", "--runs", "3",
        "--seed", "4", "--workers", "2", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let listed: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(listed.len(), 9);
    for r in 1..=3 {
        for ext in ["p", "t", "mcmc"] {
            let p = out.join(format!("primates.nex{r}.{ext}"));
            assert!(p.exists(), "{}", p.display());
            assert!(listed.contains(&p.to_string_lossy().into_owned()));
        }
    }
    let p = fs::read_to_string(out.join("primates.nex1.p")).unwrap();
    assert_eq!(p.lines().count(), 2 + 11);

    let trees: Vec<String> = (1..=3).map(|r| out.join(format!("primates.nex{r}.t")).to_string_lossy().into_owned()).collect();
    let mut args = vec!["consensus"];
    args.extend(trees.iter().map(String::as_str));
    args.extend(["--burnin", "0.25"]);
    let o = phylogrid(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with('(') && stdout(&o).ends_with(");\n"));
    assert!(stderr(&o).contains("24 trees after burn-in 0.25"), "{}", stderr(&o));
    let again = phylogrid(&args);
    assert_eq!(stdout(&again), stdout(&o));

    let garbage = write(dir.path(), "g.t", "not a tree file");
    assert_eq!(phylogrid(&["consensus", &garbage]).status.code(), Some(2));
    let o = phylogrid(&["consensus", &trees[0], "--burnin", "1.0"]);
    assert_eq!(o.status.code(), Some(2));

    let unaligned = write(dir.path(), "u.fa", PRIMATES_UNALIGNED);
    let o = phylogrid(&["run", &unaligned, "--lset", "nst=1", "--ngen", "10", "--samplefreq", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not aligned"));
    let o = phylogrid(&["run", &nex, "--lset", "nst=4", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

/// `run` and a job submitted through the API write the same bytes.
#[tokio::test(flavor = "multi_thread")]
async fn cli_run_matches_service_job() {
    let dir = tempfile::tempdir().unwrap();
    let nexus = to_nexus(PRIMATES).unwrap();
    let nex = write(dir.path(), "primates.nex", &nexus);
    let cli_out = dir.path().join("cli");
    let args: Vec<String> = [
        "run", &nex, "--lset", "nst=6 rates=gamma", "--ngen", "600", "--samplefreq", "50", "--runs", "3", "--seed",
        "2026", "--filebase", "primates.nex", "--workers", "3", "--out", cli_out.to_str().unwrap(),
    ]
    .map(String::from)
    .to_vec();
    let o = tokio::task::spawn_blocking(move || {
        phylogrid(&args.iter().map(String::as_str).collect::<Vec<_>>())
    })
    .await
    .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let data = dir.path().join("server");
    let server = start(&data).await;
    let ana = Api::login(&server, "ana").await;
    ana.post_empty("/api/proxy/init").await;
    let id = ana.create("primates").await;
    ana.post_text(&format!("/api/jobs/{id}/sequences"), &nexus).await;
    ana.post_empty(&format!("/api/jobs/{id}/alignment/accept")).await;
    let cfg = json!({"lset": "nst=6 rates=gamma", "ngen": 600, "samplefreq": 50, "runs": 3, "filebase": "primates.nex", "seed": 2026});
    assert!(ana.post(&format!("/api/jobs/{id}/config"), &cfg).await.status.is_success());
    ana.post_empty(&format!("/api/jobs/{id}/submit")).await;
    assert_eq!(ana.wait_for(&id, &["Complete", "Failed"]).await, "Complete");
    for r in 1..=3 {
        for ext in ["p", "t", "mcmc"] {
            let name = format!("primates.nex{r}.{ext}");
            let served = ana.get(&format!("/api/jobs/{id}/outputs/{name}")).await.bytes;
            assert_eq!(served, fs::read(cli_out.join(&name)).unwrap(), "{name} differs");
        }
    }
    server.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn jobs_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path()).await;
    let ana = Api::login(&server, "ana").await;
    let a = ana.create("first").await;
    let b = ana.create("second").await;
    let url = server.url();
    let run = move |args: Vec<String>| {
        tokio::task::spawn_blocking(move || phylogrid(&args.iter().map(String::as_str).collect::<Vec<_>>()))
    };
    let with = |extra: &[&str]| {
        let mut v: Vec<String> = vec!["jobs".into()];
        v.extend(extra.iter().map(|s| s.to_string()));
        v.extend(["--server".into(), url.clone(), "--user".into(), "ana".into()]);
        v
    };
    let o = run(with(&["list"])).await.unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with(&format!("{b}\tin progress\tDraft\t")));
    assert!(text.contains(&format!("{a}\tin progress\tDraft\t")));
    assert!(text.ends_with("\tfirst\n"));

    let o = run(with(&["show", &a])).await.unwrap();
    let s: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(s["id"], a.as_str());
    let o = run(with(&["cancel", &a])).await.unwrap();
    assert_eq!(stdout(&o), format!("{a}\tCancelled\n"));
    let o = run(with(&["cancel", &a])).await.unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("invalid_transition"));
    let o = run(with(&["show", "job-999999"])).await.unwrap();
    assert_eq!(o.status.code(), Some(2));
    server.stop().await.unwrap();

    let o = run(with(&["list"])).await.unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn serve_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let port = free_port().to_string();
    let mut child = Command::new(env!("CARGO_BIN_EXE_phylogrid"))
        .args(["serve", "--port", &port, "--data", data.to_str().unwrap(), "--workers", "1"])
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    while std::net::TcpStream::connect(("127.0.0.1", port.parse::<u16>().unwrap())).is_err() {
        assert!(start.elapsed() < Duration::from_secs(30), "server did not come up");
        std::thread::sleep(Duration::from_millis(20));
    }
    let second = phylogrid(&["serve", "--port", &port, "--data", data.to_str().unwrap()]);
    assert_eq!(second.status.code(), Some(3));
    assert!(stderr(&second).contains("already in use"), "{}", stderr(&second));
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(data.join("jobs").is_dir());

    let file = write(dir.path(), "f", "x");
    let o = phylogrid(&["serve", "--port", "0", "--data", &file]);
    assert_eq!(o.status.code(), Some(2));
}
