pub use tandemlight;
