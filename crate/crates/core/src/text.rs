use crate::types::Document;

/// Number of maximal non-whitespace runs in `text`.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Split long articles into consecutive, non-overlapping documents of at most
/// `limit` words each.
///
/// Window `n` of article `id` gets the id `"{id}#{n}"`. Token boundaries are
/// never split; inner whitespace is normalised to single spaces. Articles
/// without any words produce no documents.
pub fn truncate_documents<'a, I>(articles: I, limit: usize) -> Vec<Document>
where
    I: IntoIterator<Item = &'a Document>,
{
    let limit = limit.max(1);
    let mut out = Vec::new();
    for article in articles {
        let tokens: Vec<&str> = article.text.split_whitespace().collect();
        for (n, window) in tokens.chunks(limit).enumerate() {
            out.push(Document::new(
                format!("{}#{}", article.id, n),
                article.title.clone(),
                window.join(" "),
            ));
        }
    }
    out
}
