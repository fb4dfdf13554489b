//! Per-iteration gradient reports returned by the workers.

use std::collections::BTreeMap;

use crate::assignment::Placement;
use crate::error::{invalid, Result};

pub type Gradient = Vec<f64>;

/// One value per (worker, assigned file). `values[w][s]` belongs to the file
/// `placement.files_of_worker(w)[s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerReport {
    iteration: u64,
    dim: usize,
    values: Vec<Vec<Gradient>>,
}

impl WorkerReport {
    /// Every worker returns the true gradient of each of its files. The same
    /// vector is copied to all holders, so honest copies are bit-identical.
    pub fn honest(placement: &impl Placement, iteration: u64, truths: &[Gradient]) -> Result<Self> {
        if truths.len() != placement.file_count() {
            return Err(invalid(format!(
                "{} file gradients for {} files",
                truths.len(),
                placement.file_count()
            )));
        }
        let dim = truths.first().map_or(0, Vec::len);
        if truths.iter().any(|g| g.len() != dim) {
            return Err(invalid("file gradients differ in dimension"));
        }
        let values = (0..placement.worker_count())
            .map(|w| {
                placement
                    .files_of_worker(w)
                    .iter()
                    .map(|&file| truths[file].clone())
                    .collect()
            })
            .collect();
        Ok(WorkerReport {
            iteration,
            dim,
            values,
        })
    }

    /// Assembles a report from explicit `(worker, file) -> value` entries,
    /// which must cover the placement exactly.
    pub fn from_entries(
        placement: &impl Placement,
        iteration: u64,
        mut entries: BTreeMap<(usize, usize), Gradient>,
    ) -> Result<Self> {
        let dim = entries.values().next().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(placement.worker_count());
        for w in 0..placement.worker_count() {
            let mut row = Vec::with_capacity(placement.files_of_worker(w).len());
            for &file in placement.files_of_worker(w) {
                let v = entries.remove(&(w, file)).ok_or_else(|| {
                    invalid(format!("report is missing U{} on file {file}", w + 1))
                })?;
                if v.len() != dim {
                    return Err(invalid("reported vectors differ in dimension"));
                }
                row.push(v);
            }
            values.push(row);
        }
        if let Some(&(w, file)) = entries.keys().next() {
            return Err(invalid(format!(
                "U{} reported on unassigned file {file}",
                w + 1
            )));
        }
        Ok(WorkerReport {
            iteration,
            dim,
            values,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Errors unless the report has exactly the placement's shape.
    pub fn check_shape(&self, placement: &impl Placement) -> Result<()> {
        if self.values.len() != placement.worker_count() {
            return Err(invalid(format!(
                "report covers {} workers, placement has {}",
                self.values.len(),
                placement.worker_count()
            )));
        }
        for (w, row) in self.values.iter().enumerate() {
            if row.len() != placement.files_of_worker(w).len() {
                return Err(invalid(format!(
                    "U{} reported {} values for {} assigned files",
                    w + 1,
                    row.len(),
                    placement.files_of_worker(w).len()
                )));
            }
            if row.iter().any(|v| v.len() != self.dim) {
                return Err(invalid("reported vectors differ in dimension"));
            }
        }
        Ok(())
    }

    /// Values of `worker`, in the order of its assigned files.
    pub fn worker_values(&self, worker: usize) -> &[Gradient] {
        &self.values[worker]
    }

    pub fn value(&self, placement: &impl Placement, worker: usize, file: usize) -> Option<&[f64]> {
        let slot = placement.slot(worker, file)?;
        self.values.get(worker)?.get(slot).map(Vec::as_slice)
    }

    pub fn set_slot(&mut self, worker: usize, slot: usize, value: Gradient) {
        debug_assert_eq!(value.len(), self.dim);
        self.values[worker][slot] = value;
    }

    /// The `r` values returned for `file`, in worker order.
    pub fn copies<'a>(&'a self, placement: &impl Placement, file: usize) -> Vec<&'a [f64]> {
        placement
            .workers_of_file(file)
            .iter()
            .map(|&w| {
                let slot = placement.slot(w, file).expect("placement is consistent");
                self.values[w][slot].as_slice()
            })
            .collect()
    }
}

/// Bit-exact vector equality.
pub fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Equality up to an absolute per-coordinate tolerance; `0` means bit-exact.
pub fn agrees(a: &[f64], b: &[f64], tolerance: f64) -> bool {
    if tolerance == 0.0 {
        return same_bits(a, b);
    }
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::{build_assignment, ClusterParams};

    #[test]
    fn honest_report_copies_truth() {
        let a = build_assignment(ClusterParams::new(5, 3, 0).unwrap()).unwrap();
        let truths: Vec<Gradient> = (0..a.file_count()).map(|i| vec![i as f64, -1.0]).collect();
        let report = WorkerReport::honest(&a, 3, &truths).unwrap();
        report.check_shape(&a).unwrap();
        for file in 0..a.file_count() {
            for copy in report.copies(&a, file) {
                assert!(same_bits(copy, &truths[file]));
            }
        }
        assert_eq!(report.value(&a, 0, 0), Some(&[0.0, -1.0][..]));
        assert_eq!(report.value(&a, 4, 0), None);
    }

    #[test]
    fn entries_must_cover_assignment() {
        let a = build_assignment(ClusterParams::new(3, 3, 0).unwrap()).unwrap();
        let mut entries = BTreeMap::new();
        entries.insert((0, 0), vec![1.0]);
        entries.insert((1, 0), vec![1.0]);
        assert!(WorkerReport::from_entries(&a, 0, entries.clone()).is_err());
        entries.insert((2, 0), vec![1.0]);
        assert!(WorkerReport::from_entries(&a, 0, entries.clone()).is_ok());
        entries.insert((2, 1), vec![1.0]);
        assert!(WorkerReport::from_entries(&a, 0, entries).is_err());
    }

    #[test]
    fn equality_modes() {
        assert!(!same_bits(&[0.0], &[-0.0]));
        assert!(agrees(&[1.0], &[1.0 + 1e-12], 1e-9));
        assert!(!agrees(&[1.0], &[1.0 + 1e-12], 0.0));
    }
}
