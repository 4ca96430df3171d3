//! Guide listings. Each chapter of `book/src` is included here so its code
//! blocks run as doc-tests.

macro_rules! chapter {
    ($name:ident, $file:literal) => {
        #[doc = include_str!(concat!("../../../book/src/", $file))]
        pub mod $name {}
    };
}

chapter!(introduction, "introduction.md");
chapter!(pipeline, "pipeline.md");
chapter!(synthetic_data, "synthetic-data.md");
chapter!(augmentation, "augmentation.md");
chapter!(network, "network.md");
chapter!(losses, "losses.md");
chapter!(training, "training.md");
chapter!(retrieval, "retrieval.md");
chapter!(evaluation, "evaluation.md");
chapter!(formats, "formats.md");
