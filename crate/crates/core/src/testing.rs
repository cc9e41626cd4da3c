//! Small fixed graphs shared by unit tests, integration tests and examples.

use crate::graph::{build_graph, AugmentedGraph, Document, Triple};

/// Two entities joined by `genre`, and two comment sentences on the film.
pub fn film_graph() -> AugmentedGraph {
    build_graph(
        &[Triple::new("Monsters University", "genre", "Comedy")],
        &[Document::new(
            "Monsters University",
            "Monsters University is worth it. Great climax.",
        )],
        "has_comment",
    )
    .expect("fixture is valid")
}

/// Three entities and two sentences; every vertex has at least one
/// out-edge.
pub fn five_vertex_graph() -> AugmentedGraph {
    build_graph(
        &[
            Triple::new("Paris", "capital_of", "France"),
            Triple::new("France", "located_in", "Europe"),
        ],
        &[
            Document::new("Paris", "The city of light sits on the Seine."),
            Document::new("Europe", "A continent with many languages."),
        ],
        "mentions",
    )
    .expect("fixture is valid")
}

/// A twenty-vertex graph of films, genres, people and comments, small
/// enough for end-to-end command tests.
pub fn twenty_vertex_triples() -> (Vec<Triple>, Vec<Document>) {
    let triples = vec![
        Triple::new("Monsters University", "genre", "Comedy"),
        Triple::new("Monsters University", "directed_by", "Dan Scanlon"),
        Triple::new("Toy Story", "genre", "Comedy"),
        Triple::new("Toy Story", "directed_by", "John Lasseter"),
        Triple::new("Up", "genre", "Adventure"),
        Triple::new("Up", "directed_by", "Pete Docter"),
        Triple::new("Inside Out", "directed_by", "Pete Docter"),
        Triple::new("Inside Out", "genre", "Drama"),
    ];
    let docs = vec![
        Document::new("Monsters University", "The climax is great. Worth watching twice."),
        Document::new("Toy Story", "A landmark of computer animation."),
        Document::new("Up", "The opening montage makes people cry."),
        Document::new("Inside Out", "Emotions are the main characters."),
        Document::new("Pete Docter", "He also voiced several small roles."),
        Document::new("Comedy", "Laughter is the point of the genre."),
        Document::new("Drama", "Quiet stories about ordinary lives."),
        Document::new("Adventure", "Journeys to far places. Danger along the way."),
    ];
    (triples, docs)
}

pub fn twenty_vertex_graph() -> AugmentedGraph {
    let (t, d) = twenty_vertex_triples();
    build_graph(&t, &d, "has_comment").expect("fixture is valid")
}
