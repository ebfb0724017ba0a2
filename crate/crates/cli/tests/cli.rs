use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_commutree"))
            .arg("--manifest")
            .arg(self.path("manifest.jsonl"))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn toy(&self, name: &str) -> String {
        let p = self.path(&format!("{name}.inst"));
        self.ok(&["generate", "--toy", name, "-o", p.to_str().unwrap()]);
        p.to_str().unwrap().to_string()
    }

    fn partition(&self, inst: &str, name: &str) -> String {
        let p = self.path(name);
        self.ok(&["partition", "-i", inst, "-o", p.to_str().unwrap()]);
        p.to_str().unwrap().to_string()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn toy_partition_and_events() {
    let env = Env::new();
    let inst = env.toy("toy1d");
    let tree = env.path("t.tree");
    let events = env.path("ev.csv");
    let out = env.ok(&["partition", "-i", &inst, "-o", s(&tree), "--events", s(&events)]);
    assert!(out.contains("leaves 2"), "{out}");
    let csv = std::fs::read_to_string(&events).unwrap();
    assert!(csv.starts_with("iter,t_wall,action,cell_volume,closed_fraction"));
    let last = csv.lines().last().unwrap();
    assert_eq!(last.rsplit(',').next().unwrap().parse::<f64>().unwrap(), 1.0);

    let stats = env.ok(&["stats", "-t", s(&tree), "--events", s(&events)]);
    assert!(stats.lines().any(|l| l == "leaves 2"), "{stats}");
    assert!(stats.lines().any(|l| l == "iterations 3"), "{stats}");

    for (theta, delta) in [("0.5", "delta=0"), ("-0.5", "delta=1")] {
        let q = env.ok(&["query", "-t", s(&tree), theta]);
        assert!(q.starts_with(delta), "{q}");
    }

    let manifest = std::fs::read_to_string(env.path("manifest.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = manifest.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[1]["command"], "partition");
    assert_eq!(lines[1]["exit_code"], 0);
    assert_eq!(lines[1]["config"]["deterministic"], true);
}

#[test]
fn deterministic_partition_is_byte_identical() {
    let env = Env::new();
    let inst = env.toy("toy2d");
    let a = env.partition(&inst, "a.tree");
    let b = env.partition(&inst, "b.tree");
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn oversized_theta_exits_2_with_witness() {
    let env = Env::new();
    let inst = env.toy("toy1d");
    let out = env.run(&["partition", "-i", &inst, "--theta-box", "-1:1.5", "-o", s(&env.path("t.tree"))]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let w: f64 = stdout.trim().strip_prefix("witness ").unwrap().parse().unwrap();
    assert!(w > 1.0 && w <= 1.5);
}

#[test]
fn usage_and_io_errors_exit_1() {
    let env = Env::new();
    let out = env.run(&["partition", "-i", s(&env.path("missing")), "-o", s(&env.path("t"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(env.run(&["partition", "--bogus"]).status.code(), Some(1));
    assert_eq!(env.run(&[]).status.code(), Some(1));
    assert_eq!(env.run(&["--help"]).status.code(), Some(0));
}

#[test]
fn refine_certifies_and_verifies() {
    let env = Env::new();
    let inst = env.toy("toy1d-offset");
    let tree = env.partition(&inst, "t.tree");

    let r02 = env.path("r02.tree");
    let cert = env.path("cert.csv");
    env.ok(&["refine", "-i", &inst, "-t", &tree, "-o", s(&r02), "--eps-abs", "0.2", "--report", s(&cert)]);
    let csv = std::fs::read_to_string(&cert).unwrap();
    assert!(csv.starts_with("leaf,status,e_abs,e_rel,rho,depth"));
    for line in csv.lines().skip(1).filter(|l| !l.starts_with('#')) {
        let status = line.split(',').nth(1).unwrap();
        assert!(status == "certified" || status == "only-feasible", "{line}");
    }
    let warned: f64 = csv.lines().last().unwrap().rsplit(' ').next().unwrap().parse().unwrap();
    assert_eq!(warned, 0.0);

    let r005 = env.path("r005.tree");
    let events = env.path("ev.csv");
    env.ok(&["refine", "-i", &inst, "-t", &tree, "-o", s(&r005), "--eps-abs", "0.05", "--events", s(&events)]);
    let ev = std::fs::read_to_string(&events).unwrap();
    assert!(ev.lines().any(|l| l.contains(",snap,") || l.contains(",bisect,")));
    let v = env.ok(&["verify", "-i", &inst, "-t", s(&r005), "--eps-abs", "0.05", "--samples-per-leaf", "100"]);
    assert!(v.contains("result pass"), "{v}");
}

#[test]
fn rho_below_one_is_rejected() {
    let env = Env::new();
    let inst = env.toy("toy1d");
    let tree = env.partition(&inst, "t.tree");
    let out = env.run(&["refine", "-i", &inst, "-t", &tree, "-o", s(&env.path("r")), "--rho-max", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_flags_mutated_leaf() {
    let env = Env::new();
    let inst = env.toy("toy1d");
    let tree = env.partition(&inst, "t.tree");
    assert!(env.ok(&["verify", "-i", &inst, "-t", &tree]).contains("result pass"));
    assert!(env.ok(&["verify", "-i", &inst, "-t", &tree, "--samples-per-leaf", "0"]).contains("result pass"));

    // Flip the commutation of the first leaf line.
    let text = std::fs::read_to_string(&tree).unwrap();
    let mut mutated = Vec::new();
    let mut leaf_id = None;
    for line in text.lines() {
        let toks: Vec<&str> = line.split(' ').collect();
        if leaf_id.is_none() && toks.first() == Some(&"node") && toks[3] == "feasible" {
            leaf_id = Some(toks[1].to_string());
            let flipped: String = toks[5].chars().map(|c| if c == '0' { '1' } else { '0' }).collect();
            let mut t = toks.clone();
            t[5] = &flipped;
            mutated.push(t.join(" "));
        } else {
            mutated.push(line.to_string());
        }
    }
    let bad = env.path("bad.tree");
    std::fs::write(&bad, mutated.join("\n") + "\n").unwrap();
    let out = env.run(&["verify", "-i", &inst, "-t", s(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let id = leaf_id.unwrap();
    assert!(stdout.contains(&format!("leaf {id}")), "{stdout}");
}

#[test]
fn generated_instances_are_reproducible() {
    let env = Env::new();
    let a = env.path("a.inst");
    let b = env.path("b.inst");
    for p in [&a, &b] {
        env.ok(&["--seed", "7", "generate", "--n-r", "1", "-o", s(p)]);
    }
    let ta = std::fs::read_to_string(&a).unwrap();
    assert_eq!(ta, std::fs::read_to_string(&b).unwrap());
    assert!(ta.contains("dims 2 4 9"), "{}", ta.lines().take(4).collect::<Vec<_>>().join("\n"));
    assert!(ta.contains("meta seed 7"));
    assert!(ta.contains("meta pole0 "));
}
