//! Streaming action-primitive segmentation of keypoint tracks.
//!
//! Keypoint velocities are encoded into quantized latent vectors, the
//! frame-to-frame change of those vectors (latent action energy) drives a
//! hysteresis detector, and the resulting primitives are embedded by a
//! frozen transformer, clustered, and scored.
//!
//! Stages, in pipeline order:
//!
//! | module | role |
//! |---|---|
//! | [`clip`], [`latent`], [`segment`], [`io`] | on-disk formats |
//! | [`encoder`] | velocities to FSQ codes and latent vectors |
//! | [`detector`] | energy, EMA, hysteresis state machine |
//! | [`calibration`] | data-driven `theta_on` |
//! | [`embedder`] | frozen transformer embeddings |
//! | [`cluster`] | cosine k-means, silhouette, Calinski-Harabasz |
//! | [`icss`] | intra-cluster semantic similarity |
//! | [`eval`] | boundary F1 |
//! | [`synth`] | synthetic streams with known boundaries |
//! | [`pipeline`] | everything above over a corpus directory |

pub mod calibration;
pub mod clip;
pub mod cluster;
pub mod config;
pub mod detector;
pub mod embedder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod icss;
pub mod io;
pub mod latent;
pub mod pipeline;
pub mod seed;
pub mod segment;
pub mod synth;

pub use error::{LapsError, Result};

/// Guide chapters, compiled as doc-tests so the snippets stay current.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/latent-streams.md")]
    pub mod latent_streams {}
    #[doc = include_str!("../../../book/src/detector.md")]
    pub mod detector {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    pub mod calibration {}
    #[doc = include_str!("../../../book/src/embedding.md")]
    pub mod embedding {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    pub mod clustering {}
    #[doc = include_str!("../../../book/src/icss.md")]
    pub mod icss {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    pub mod synthetic {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    pub mod pipeline {}
}
