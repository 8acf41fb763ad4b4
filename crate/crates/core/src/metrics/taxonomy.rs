use super::scores::Split;

/// A task category and its evaluation datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Category {
    pub id: &'static str,
    pub split: Split,
    pub datasets: &'static [&'static str],
}

/// Eight held-in categories with two datasets each.
pub const HELD_IN: [Category; 8] = [
    Category { id: "multiple_choice_qa", split: Split::HeldIn, datasets: &["dream", "cosmos_qa"] },
    Category { id: "extractive_qa", split: Split::HeldIn, datasets: &["adversarial_qa", "ropes"] },
    Category { id: "closed_book_qa", split: Split::HeldIn, datasets: &["hotpot_qa", "wiki_qa"] },
    Category { id: "sentiment", split: Split::HeldIn, datasets: &["app_reviews", "imdb"] },
    Category { id: "topic_classification", split: Split::HeldIn, datasets: &["ag_news", "dbpedia"] },
    Category { id: "structure_to_text", split: Split::HeldIn, datasets: &["common_gen", "wiki_bio"] },
    Category { id: "summarization", split: Split::HeldIn, datasets: &["cnn_dailymail", "xsum"] },
    Category { id: "paraphrase", split: Split::HeldIn, datasets: &["mrpc", "qqp"] },
];

/// Four held-out categories, seven datasets in total.
pub const HELD_OUT: [Category; 4] = [
    Category { id: "sentence_completion", split: Split::HeldOut, datasets: &["copa", "hellaswag"] },
    Category { id: "nli", split: Split::HeldOut, datasets: &["anli", "rte"] },
    Category { id: "coreference", split: Split::HeldOut, datasets: &["wsc", "winogrande"] },
    Category { id: "word_sense", split: Split::HeldOut, datasets: &["wic"] },
];

pub fn held_in_ids() -> Vec<String> {
    HELD_IN.iter().map(|c| c.id.to_string()).collect()
}

pub fn category(id: &str) -> Option<&'static Category> {
    HELD_IN.iter().chain(HELD_OUT.iter()).find(|c| c.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(HELD_IN.iter().map(|c| c.datasets.len()).sum::<usize>(), 16);
        assert_eq!(HELD_OUT.iter().map(|c| c.datasets.len()).sum::<usize>(), 7);
        assert_eq!(category("nli").unwrap().split, Split::HeldOut);
        assert!(category("nope").is_none());
    }
}
