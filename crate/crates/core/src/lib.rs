//! Batch mining of a broadband-ISP discussion forum.
//!
//! The pipeline ingests a newline-delimited forum dump, scores sentiment,
//! finds the days where strong sentiment peaks, detects outage chatter,
//! surfaces popular posts with their topic rankings, and turns OCR'd
//! speed-test screenshots into monthly bandwidth trends.

pub mod calendar;
pub mod clients;
pub mod corpus;
pub mod fixture;
pub mod outage;
pub mod peaks;
pub mod popularity;
pub mod sentiment;
pub mod speedtest;
pub mod textmine;
pub mod trends;

pub use calendar::YearMonth;
pub use corpus::{Comment, Post, Thread};
pub use sentiment::{Lexicon, SentimentScore, StrongLabel};
pub use textmine::{StopWords, TokenStream};
