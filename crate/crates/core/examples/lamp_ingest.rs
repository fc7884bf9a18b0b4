//! Loads a LaMP-format questions/outputs pair and prints the prompt pieces.

use personal_rag::corpus::{load_dataset, TaskKind};
use personal_rag::prompting::Templates;

const QUESTIONS: &str = r#"[
  {"id": "310", "input": "Generate a title for the following abstract of a paper: Dense retrievers can be trained from generator feedback.",
   "profile": [
     {"id": "3100", "title": "Sparse Retrieval Revisited", "abstract": "Term matching remains strong.", "date": "2021-11-30"},
     {"id": "3101", "title": "Learning to Rank with Feedback", "abstract": "We study ranking from clicks.", "date": "2019-03-04"}
   ]}
]"#;

const OUTPUTS: &str = r#"{"task": "LaMP_5", "golds": [{"id": "310", "output": "Retrievers Taught by Generators"}]}"#;

fn main() -> personal_rag::Result<()> {
    let dir = std::env::temp_dir().join("personal-rag-lamp-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let (q, o) = (dir.join("questions.json"), dir.join("outputs.json"));
    std::fs::write(&q, QUESTIONS).expect("write questions");
    std::fs::write(&o, OUTPUTS).expect("write outputs");

    let data = load_dataset(&q, &o, TaskKind::ScholarlyTitle)?;
    let templates = Templates::shipped();
    for inst in &data.instances {
        println!("{} -> {:?}", inst.instance_id, inst.target);
        println!("query: {}", templates.make_query(inst.task, &inst.input_text));
        for doc in &inst.profile.docs {
            println!("  doc {}: {}", doc.doc_id, templates.render_document(doc, inst.task)?);
        }
        let docs: Vec<_> = inst.profile.docs.iter().collect();
        println!("prompt: {}", templates.build_prompt_from_docs(inst, &docs)?);
    }
    Ok(())
}
