//! STFT round trip, oracle masking and the global SDR of the result.
//!
//! cargo run --example spectral

use inmsrl::corpus::{synth_corpus, Instrument};
use inmsrl::dsp::{format_db, global_sdr, hadamard_separate, istft, log_mel, stft, Mask};

fn main() -> inmsrl::Result<()> {
    let corpus = synth_corpus(2, 10.0, 3, 4000)?.corpus;
    let stems = &corpus.pieces()[0].stems;
    let (window, hop) = (256, 64);

    let mix = stft(stems.mix(), window, hop)?;
    // The inverse transform tapers the first and last window - hop samples.
    let edge = window - hop;
    let interior = |w: &inmsrl::dsp::Waveform, n: usize| w.slice(edge, n - 2 * edge);
    let back = istft(&mix)?;
    let n = back.len().min(stems.mix().len());
    println!("mix round trip: {} dB", format_db(global_sdr(&interior(&back, n), &interior(stems.mix(), n))?));

    let mel = log_mel(&mix.magnitude(), 48, corpus.sample_rate())?;
    println!("log-mel: {} frames x {} bands", mel.frames(), mel.n_mels());

    // Ideal ratio mask per instrument, applied to the mix magnitude and
    // inverted with the mix phase.
    let mix_mag = mix.magnitude();
    for inst in [Instrument::Drums, Instrument::Bass, Instrument::Piano] {
        let reference = stems.stem_in_mix(inst);
        let target = stft(&reference, window, hop)?.magnitude();
        let ratio: Vec<f64> = target
            .data()
            .iter()
            .zip(mix_mag.data())
            .map(|(t, m)| if *m > 0.0 { (t / m).min(1.0) } else { 0.0 })
            .collect();
        let mask = Mask::new(mix_mag.frames(), mix_mag.bins(), ratio)?;
        let est = istft(&mix.with_magnitude(&hadamard_separate(&mix_mag, &mask)?)?)?;
        let n = est.len().min(reference.len());
        let sdr = global_sdr(&interior(&est, n), &interior(&reference, n))?;
        println!("{inst}: ideal-ratio-mask SDR {} dB", format_db(sdr));
    }
    Ok(())
}
