//! Overrides the shipped prompt templates from TOML and fits a prompt to a
//! token cap.

use std::collections::BTreeMap;
use std::sync::Arc;

use personal_rag::corpus::{Instance, ProfileDocument, TaskKind, UserProfile};
use personal_rag::prompting::Templates;

const CUSTOM: &str = r#"
joiner = " | "
token_cap = 40

[tasks.product_rating]
ppep = 'rated {score}: {text}'
connective = ". Now rate this one. "
query_markers = ["review:"]
"#;

fn review(id: &str, score: &str, text: &str) -> ProfileDocument {
    let fields = BTreeMap::from([("score".to_string(), score.to_string()), ("text".to_string(), text.to_string())]);
    ProfileDocument::new(id, fields)
}

fn main() -> personal_rag::Result<()> {
    let profile = UserProfile {
        user_id: "u1".into(),
        docs: vec![
            review("r1", "5", "Sturdy kettle, boils fast and looks great on the counter."),
            review("r2", "2", "The lid broke after a week and support never answered."),
            review("r3", "4", "Good grinder, a little loud in the morning."),
        ],
    };
    let inst = Instance {
        instance_id: "q1".into(),
        profile: Arc::new(profile),
        input_text: "What is the score of the following review on a scale of 1 to 5? review: Loud but it works.".into(),
        target: "4".into(),
        task: TaskKind::ProductRating,
        planted: None,
    };
    let docs: Vec<&ProfileDocument> = inst.profile.docs.iter().collect();

    for (name, templates) in [("shipped", Templates::shipped().clone()), ("custom", Templates::from_toml_str(CUSTOM)?)] {
        println!("[{name}] query: {}", templates.make_query(inst.task, &inst.input_text));
        println!("[{name}] prompt: {}\n", templates.build_prompt_from_docs(&inst, &docs)?);
    }
    Ok(())
}
