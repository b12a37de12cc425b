//! Pulse-level link simulation and dataset persistence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use crate::channel::{realize_subchannel, sample_phase_drift};
use crate::error::{Error, Result, StageContext};
use crate::rng::{indexed_stream, stream};
use crate::scalar::Real;
use crate::signal::{
    build_frame_with_pilots, detect_homodyne, detect_homodyne_with_conjugate, modulate_gmcs, pilot_sequence,
    PulseSamples, SlotKind, PULSE_LEN,
};

/// A detected pulse with the value Alice modulated onto it.
pub type Observation<T> = (PulseSamples<T>, T);

/// Detected pilot/signal pairs; index `i` of both vectors shares one channel draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedLink<T> {
    pub pilots: Vec<Observation<T>>,
    pub signals: Vec<Observation<T>>,
    /// Fading draws that exceeded unit transmittance.
    pub clamp_events: usize,
}

/// One channel block's (pilot, signal) observations and whether it clamped.
type Block<T> = (Vec<(Observation<T>, Observation<T>)>, bool);

/// Runs modulation, framing, channel and detection for `cfg.n_pulses` pairs.
///
/// Streams are keyed by `prefix` so several links can share one seed. Each
/// channel block draws from its own stream, so blocks run in parallel and
/// the result does not depend on the thread count.
pub fn simulate_link<T: Real>(cfg: &ExperimentConfig<T>, prefix: &str) -> Result<SimulatedLink<T>> {
    let n = cfg.n_pulses;
    let seed = cfg.seed;
    let symbols =
        modulate_gmcs(&cfg.protocol, n, &mut stream(seed, &format!("{prefix}modulation"))).stage("modulate")?;
    let pilot_values = pilot_sequence(&cfg.protocol, n, &mut stream(seed, &format!("{prefix}pilots")));
    let x: Vec<T> = symbols.iter().map(|s| s.0).collect();
    let frame = build_frame_with_pilots(&x, &pilot_values).stage("frame")?;

    let link = cfg.channel.link_model();
    let block_len = cfg.channel.block_len;
    let label = format!("{prefix}channel");
    let blocks: Vec<Block<T>> = (0..n.div_ceil(block_len))
        .into_par_iter()
        .map(|b| {
            let mut rng = indexed_stream(seed, &label, b);
            let (base, clamped) = realize_subchannel(&link, &cfg.channel.block_phase, &cfg.detector, &mut rng);
            let pairs = (b * block_len..((b + 1) * block_len).min(n))
                .map(|i| {
                    let mut r = base;
                    r.phase_drift += sample_phase_drift(&cfg.channel.pulse_phase, &mut rng);
                    let (pilot, signal) = (&frame[2 * i], &frame[2 * i + 1]);
                    let yp = detect_homodyne(&pilot.pulse, &r, &cfg.detector, &mut rng);
                    let ys = detect_homodyne_with_conjugate(&signal.pulse, symbols[i].1, &r, &cfg.detector, &mut rng);
                    ((yp, pilot.modulated_value), (ys, signal.modulated_value))
                })
                .collect();
            (pairs, clamped)
        })
        .collect();

    let mut out = SimulatedLink { pilots: Vec::with_capacity(n), signals: Vec::with_capacity(n), clamp_events: 0 };
    for (pairs, clamped) in blocks {
        out.clamp_events += usize::from(clamped);
        for (p, s) in pairs {
            out.pilots.push(p);
            out.signals.push(s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetRow<T> {
    pub frame_index: usize,
    pub kind: SlotKind,
    pub modulated_value: T,
    pub samples: [T; PULSE_LEN],
    pub osp_value: T,
}

/// Flattens a link back into frame order (pilot, signal, pilot, ...).
pub fn dataset_rows<T: Real>(link: &SimulatedLink<T>) -> Vec<DatasetRow<T>> {
    let row = |frame_index, kind, (pulse, value): &Observation<T>| DatasetRow {
        frame_index,
        kind,
        modulated_value: *value,
        samples: pulse.samples,
        osp_value: pulse.samples[pulse.osp_index],
    };
    link.pilots
        .iter()
        .zip(&link.signals)
        .enumerate()
        .flat_map(|(i, (p, s))| [row(2 * i, SlotKind::Pilot, p), row(2 * i + 1, SlotKind::Signal, s)])
        .collect()
}

const HEADER: [&str; 12] =
    ["frame_index", "kind", "modulated_value", "s0", "s1", "s2", "s3", "s4", "s5", "s6", "s7", "osp_value"];

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes rows as CSV. Floats use the shortest representation that parses
/// back to the same value, so a save/load cycle is exact.
pub fn save_dataset<T: Real, W: Write>(rows: &[DatasetRow<T>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(csv_io)?;
    let mut record = Vec::with_capacity(HEADER.len());
    for r in rows {
        record.clear();
        record.push(r.frame_index.to_string());
        record.push(match r.kind {
            SlotKind::Pilot => "pilot".to_string(),
            SlotKind::Signal => "signal".to_string(),
        });
        record.push(r.modulated_value.to_string());
        record.extend(r.samples.iter().map(|s| s.to_string()));
        record.push(r.osp_value.to_string());
        w.write_record(&record).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset_file<T: Real>(rows: &[DatasetRow<T>], path: &Path) -> Result<()> {
    save_dataset(rows, BufWriter::new(File::create(path)?))
}

/// Reads rows written by [`save_dataset`]; malformed lines report their line number.
pub fn load_dataset<T: Real, R: Read>(input: R) -> Result<Vec<DatasetRow<T>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut rows = Vec::new();
    let mut header_seen = false;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if !header_seen {
            if record.iter().ne(HEADER) {
                return Err(Error::Parse { line, msg: "unexpected header".into() });
            }
            header_seen = true;
            continue;
        }
        if record.len() != HEADER.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", HEADER.len(), record.len()),
            });
        }
        let num = |i: usize| -> Result<T> {
            record[i].parse::<T>().map_err(|_| Error::Parse {
                line,
                msg: format!("column `{}` is not a number: `{}`", HEADER[i], &record[i]),
            })
        };
        let frame_index = record[0]
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("bad frame index `{}`", &record[0]) })?;
        let kind = match &record[1] {
            "pilot" => SlotKind::Pilot,
            "signal" => SlotKind::Signal,
            other => return Err(Error::Parse { line, msg: format!("unknown slot kind `{other}`") }),
        };
        let mut samples = [T::zero(); PULSE_LEN];
        for (k, s) in samples.iter_mut().enumerate() {
            *s = num(3 + k)?;
        }
        rows.push(DatasetRow { frame_index, kind, modulated_value: num(2)?, samples, osp_value: num(11)? });
    }
    if !header_seen {
        return Err(Error::Parse { line: 1, msg: "missing header".into() });
    }
    Ok(rows)
}

pub fn load_dataset_file<T: Real>(path: &Path) -> Result<Vec<DatasetRow<T>>> {
    load_dataset(BufReader::new(File::open(path)?))
}

/// Rebuilds the pilot/signal observations from a loaded dataset.
pub fn observations<T: Real>(rows: &[DatasetRow<T>]) -> (Vec<Observation<T>>, Vec<Observation<T>>) {
    let mut pilots = Vec::new();
    let mut signals = Vec::new();
    for r in rows {
        let obs = (PulseSamples::new(r.samples), r.modulated_value);
        match r.kind {
            SlotKind::Pilot => pilots.push(obs),
            SlotKind::Signal => signals.push(obs),
        }
    }
    (pilots, signals)
}
