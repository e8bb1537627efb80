//! Fits word and character n-gram tf-idf on a synthetic corpus, reduces it
//! with LSA and projects a new author.
//!
//! cargo run --example tfidf_lsa

use authorprof::corpus::Lang;
use authorprof::features::{fit_tfidf, transform_tfidf_sparse, LsaProjector, NgramSpec, UserDoc};
use authorprof::synthetic::{synthetic_dataset, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synthetic_dataset(&SyntheticSpec { users: 60, ..SyntheticSpec::default() });
    let docs: Vec<UserDoc> = data.users().iter().map(UserDoc::from_user).collect();
    let spec = NgramSpec::for_lang(Lang::En);

    let tfidf = fit_tfidf(&docs, &spec)?;
    println!("{} features kept (n-grams seen fewer than {} times are dropped)", tfidf.num_features(), spec.min_total_freq);
    for key in tfidf.features().iter().filter(|k| k.contains("sheep") || k.contains("goat")).take(6) {
        let col = tfidf.column(key).expect("listed feature");
        println!("  {key:<16} idf {:.4}", tfidf.idf()[col]);
    }
    let row = transform_tfidf_sparse(&tfidf, &docs[0]);
    println!("first author: {} non-zero entries, unit norm {:.6}", row.len(), row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt());

    let projector = LsaProjector::fit(&docs, &spec, 10, 0)?;
    let sv: Vec<String> = projector.fit.singular_values.iter().map(|s| format!("{s:.3}")).collect();
    println!("\ntop singular values: {}", sv.join(" "));

    let newcomer = UserDoc::new("w1 sheep w4 w4\nsheep w2 w9 w17\nw3 w8 sheep");
    let z = projector.transform(&newcomer);
    let z: Vec<String> = z.iter().map(|v| format!("{v:+.3}")).collect();
    println!("new author in LSA space: [{}]", z.join(", "));
    Ok(())
}
