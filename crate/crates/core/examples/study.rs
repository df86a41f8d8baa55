use c3dr::simharness::{run_study, StudyConfig, StudySpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let study: u8 = args.get(1).map_or(1, |s| s.parse().unwrap());
    let n: usize = args.get(2).map_or(120, |s| s.parse().unwrap());
    let reps: usize = args.get(3).map_or(100, |s| s.parse().unwrap());
    let spec = StudySpec::new(study, n, reps, 20240601).unwrap();
    let start = std::time::Instant::now();
    let report = run_study(&spec, &StudyConfig::default()).unwrap();
    for m in &report.metrics {
        println!("{} mean {:.3} se {:.3}", m.name, m.mean, m.se);
    }
    println!("failures {} elapsed {:.1?}", report.failures, start.elapsed());
    for r in report.replicates.iter().filter(|r| r.error.is_some()).take(3) {
        println!("{:?}", r.error);
    }
}
