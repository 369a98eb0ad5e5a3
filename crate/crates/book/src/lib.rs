//! Compiles the guide in `book/src` so its snippets run as doctests.

macro_rules! chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub mod $name {}
        )*
    };
}

chapters! {
    introduction => "introduction.md",
    corpus => "corpus.md",
    color_features => "color_features.md",
    feature_maps => "feature_maps.md",
    search => "search.md",
    collaboration => "collaboration.md",
    tasks => "tasks.md",
    service => "service.md",
}
