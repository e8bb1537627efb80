//! Reads a PAN author-profiling directory (`<id>.xml` per author plus
//! `truth.txt`) and prints corpus statistics. Without an argument a two-author
//! directory is generated first.
//!
//! cargo run --example pan_ingest -- /data/pan18/en/text

use std::fs;
use std::path::PathBuf;

use authorprof::corpus::{load_pan_dir, Lang};

const SAMPLE: [(&str, &str, [&str; 3]); 2] = [
    ("a1f3", "female", ["Morning run done!", "<3 my cat", "coffee and code"]),
    ("b7c2", "male", ["Match tonight #football", "new keyboard :)", "see http://example.com"]),
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = match std::env::args().nth(1) {
        Some(d) => PathBuf::from(d),
        None => sample_dir()?,
    };
    let data = load_pan_dir(&dir, Lang::En)?;
    let tweets: usize = data.users().iter().map(|u| u.tweets.len()).sum();
    println!("{}: {} authors, {} tweets", dir.display(), data.len(), tweets);
    for u in data.users().iter().take(5) {
        println!("  {} {:?} first tweet {:?}", u.user_id, u.label, u.tweets.first().map(|t| t.text()));
    }
    Ok(())
}

fn sample_dir() -> std::io::Result<PathBuf> {
    let dir = std::env::temp_dir().join("authorprof-pan-sample");
    fs::create_dir_all(&dir)?;
    let mut truth = String::new();
    for (id, gender, docs) in SAMPLE {
        let body: String = docs.iter().map(|d| format!("    <document><![CDATA[{d}]]></document>\n")).collect();
        fs::write(dir.join(format!("{id}.xml")), format!("<author lang=\"en\">\n  <documents>\n{body}  </documents>\n</author>\n"))?;
        truth.push_str(&format!("{id}:::{gender}\n"));
    }
    fs::write(dir.join("truth.txt"), truth)?;
    Ok(dir)
}
