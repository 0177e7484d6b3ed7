use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::NetworkModel;

/// One quantized observation: sensor `j` (0-based), time `k`, 1-based level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record {
    pub sensor: usize,
    pub k: usize,
    pub level: usize,
}

/// Quantized observations of every sensor, indexed `[j][k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedDataset {
    levels: Vec<Vec<usize>>,
}

impl QuantizedDataset {
    pub fn from_levels(levels: Vec<Vec<usize>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidDataset("dataset has no sensors".into()));
        }
        for (j, l) in levels.iter().enumerate() {
            if l.is_empty() {
                return Err(Error::InvalidDataset(format!("sensor {} has no observations", j + 1)));
            }
            if l.contains(&0) {
                return Err(Error::InvalidDataset(format!("sensor {} has level 0; levels are 1-based", j + 1)));
            }
        }
        Ok(Self { levels })
    }

    /// Build from records covering `k = 0..K_j` exactly once for each of `n_sensors` sensors.
    pub fn from_records(n_sensors: usize, records: &[Record]) -> Result<Self> {
        let mut levels: Vec<Vec<Option<usize>>> = vec![Vec::new(); n_sensors];
        for rec in records {
            let row = levels.get_mut(rec.sensor).ok_or_else(|| {
                Error::InvalidDataset(format!("record refers to sensor {} of {n_sensors}", rec.sensor + 1))
            })?;
            if row.len() <= rec.k {
                row.resize(rec.k + 1, None);
            }
            if row[rec.k].replace(rec.level).is_some() {
                return Err(Error::InvalidDataset(format!(
                    "duplicate record for sensor {}, k {}",
                    rec.sensor + 1,
                    rec.k
                )));
            }
        }
        let levels = levels
            .into_iter()
            .enumerate()
            .map(|(j, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(k, l)| {
                        l.ok_or_else(|| Error::InvalidDataset(format!("sensor {} is missing k {k}", j + 1)))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_levels(levels)
    }

    pub fn n_sensors(&self) -> usize {
        self.levels.len()
    }

    /// `K_j`.
    pub fn observations(&self, j: usize) -> usize {
        self.levels[j].len()
    }

    pub fn levels(&self, j: usize) -> &[usize] {
        &self.levels[j]
    }

    pub fn records(&self) -> impl Iterator<Item = Record> + '_ {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(j, row)| row.iter().enumerate().map(move |(k, &level)| Record { sensor: j, k, level }))
    }

    /// Check sensor count and level ranges against a model.
    pub fn check(&self, model: &NetworkModel) -> Result<()> {
        if self.n_sensors() != model.n_sensors() {
            return Err(Error::InvalidDataset(format!(
                "dataset has {} sensors, model has {}",
                self.n_sensors(),
                model.n_sensors()
            )));
        }
        for (j, row) in self.levels.iter().enumerate() {
            let r = model.sensor(j).levels();
            if let Some(k) = row.iter().position(|&l| l > r) {
                return Err(Error::InvalidDataset(format!(
                    "sensor {} at k {k} has level {} but the quantizer has {r} levels",
                    j + 1,
                    row[k]
                )));
            }
        }
        Ok(())
    }

    /// CSV with header `sensor,k,level`; sensors and levels 1-based, `k` 0-based.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sensor,k,level")?;
        for rec in self.records() {
            writeln!(w, "{},{},{}", rec.sensor + 1, rec.k, rec.level)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R, n_sensors: usize) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim().replace(' ', "") == "sensor,k,level" => {}
            Some((_, Ok(h))) => return Err(Error::InvalidDataset(format!("line 1: expected header `sensor,k,level`, got `{h}`"))),
            Some((_, Err(e))) => return Err(e.into()),
            None => return Err(Error::InvalidDataset("empty dataset file".into())),
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse = |s: &str, what: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::InvalidDataset(format!("line {}: bad {what} `{s}`", i + 1)))
            };
            if fields.len() != 3 {
                return Err(Error::InvalidDataset(format!("line {}: expected 3 fields", i + 1)));
            }
            let sensor = parse(fields[0], "sensor")?;
            if sensor == 0 {
                return Err(Error::InvalidDataset(format!("line {}: sensors are 1-based", i + 1)));
            }
            records.push(Record { sensor: sensor - 1, k: parse(fields[1], "k")?, level: parse(fields[2], "level")? });
        }
        Self::from_records(n_sensors, &records)
    }
}
