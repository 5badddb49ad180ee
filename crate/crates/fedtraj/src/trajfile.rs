//! Plain-text trajectory files.
//!
//! ```text
//! # fedtraj trajectories v1: user_id,slot,loc_id
//! 0,0,17
//! 0,1,17
//! 1,0,203
//! ```
//!
//! One visit per line, sorted by user then slot. On load, each user's
//! visits are cut into one trajectory per day (`slot / slots_per_day`) and
//! the user's home is inferred from them.

use std::collections::BTreeMap;
use std::path::Path;

use fedtraj_core::{ClientDataset, LocationGrid, LocationId, Point, Trajectory, UserId};

use crate::error::{self, parse_canonical, Error, LineError, Result};

pub const HEADER: &str = "# fedtraj trajectories v1: user_id,slot,loc_id";

fn parse_record(line: &str, grid: &LocationGrid) -> std::result::Result<(u32, u32, u32), String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 comma-separated fields, found {}", fields.len()));
    }
    let mut v = [0u32; 3];
    for (slot, (field, name)) in v.iter_mut().zip(fields.iter().zip(["user_id", "slot", "loc_id"])) {
        *slot = parse_canonical(field).ok_or_else(|| format!("{name} `{field}` is not a plain integer"))?;
    }
    if !grid.contains(LocationId(v[2])) {
        return Err(format!("unknown loc_id {} (grid has {} cells)", v[2], grid.num_cells()));
    }
    Ok((v[0], v[1], v[2]))
}

/// Every malformed line is reported, not only the first.
pub fn parse_trajectories(
    text: &str,
    grid: &LocationGrid,
    slots_per_day: u32,
) -> Result<Vec<ClientDataset>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    if first != HEADER {
        return Err(Error::Header { expected: HEADER, found: first.to_string() });
    }
    let mut errors = Vec::new();
    let mut by_user: BTreeMap<u32, BTreeMap<u32, u32>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        match parse_record(line, grid) {
            Ok((user, slot, loc)) => {
                if by_user.entry(user).or_default().insert(slot, loc).is_some() {
                    errors.push(LineError {
                        line: line_no,
                        reason: format!("duplicate slot {slot} for user {user}"),
                    });
                }
            }
            Err(reason) => errors.push(LineError { line: line_no, reason }),
        }
    }
    if !text.ends_with('\n') {
        errors.push(LineError { line: text.lines().count(), reason: "missing final newline".into() });
    }
    if !errors.is_empty() {
        return Err(Error::Malformed(errors));
    }
    if slots_per_day == 0 {
        return Err(fedtraj_core::Error::InvalidParameter {
            name: "slots_per_day",
            reason: "must be at least 1".into(),
        }
        .into());
    }
    let mut out = Vec::with_capacity(by_user.len());
    for (user, visits) in by_user {
        let mut days: BTreeMap<u32, Vec<Point>> = BTreeMap::new();
        for (slot, loc) in visits {
            days.entry(slot / slots_per_day).or_default().push(Point::new(slot, loc));
        }
        let trajectories = days
            .into_values()
            .map(|pts| Trajectory::new(UserId(user), pts))
            .collect::<fedtraj_core::Result<Vec<_>>>()?;
        out.push(ClientDataset::new(UserId(user), trajectories, slots_per_day)?);
    }
    Ok(out)
}

pub fn load_trajectories(
    path: &Path,
    grid: &LocationGrid,
    slots_per_day: u32,
) -> Result<Vec<ClientDataset>> {
    parse_trajectories(&error::read(path)?, grid, slots_per_day)
}

/// Canonical text for a set of trajectories. Two visits of one user in the
/// same slot cannot be represented and are rejected.
pub fn format_trajectories<'a, I>(trajectories: I) -> Result<String>
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    let mut records = BTreeMap::new();
    for t in trajectories {
        for p in t.points() {
            if records.insert((t.user().0, p.slot), p.loc.0).is_some() {
                return Err(Error::DuplicateVisit { user: t.user().0, slot: p.slot });
            }
        }
    }
    let mut text = String::with_capacity(HEADER.len() + 12 * records.len());
    text.push_str(HEADER);
    text.push('\n');
    for ((user, slot), loc) in records {
        text.push_str(&format!("{user},{slot},{loc}\n"));
    }
    Ok(text)
}

pub fn save_trajectories<'a, I>(path: &Path, trajectories: I) -> Result<()>
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    error::write(path, &format_trajectories(trajectories)?)
}

/// All trajectories of all datasets, in dataset order.
pub fn flatten(datasets: &[ClientDataset]) -> Vec<Trajectory> {
    datasets.iter().flat_map(|d| d.trajectories().iter().cloned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> LocationGrid {
        LocationGrid::new(5, 5, 100.0, (0.0, 0.0)).unwrap()
    }

    #[test]
    fn empty_inputs() {
        assert!(parse_trajectories("", &grid(), 48).unwrap().is_empty());
        let header_only = format!("{HEADER}\n");
        assert!(parse_trajectories(&header_only, &grid(), 48).unwrap().is_empty());
        assert_eq!(format_trajectories(&[]).unwrap(), header_only);
    }

    #[test]
    fn groups_by_user_and_day() {
        let text = format!("{HEADER}\n2,49,3\n1,0,4\n2,48,3\n1,1,4\n2,0,1\n");
        let ds = parse_trajectories(&text, &grid(), 48).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].user(), UserId(1));
        assert_eq!(ds[0].trajectories().len(), 1);
        assert_eq!(ds[1].trajectories().len(), 2);
        assert_eq!(ds[1].trajectories()[1].points(), &[Point::new(48, 3), Point::new(49, 3)]);
        assert_eq!(ds[1].home(), LocationId(3));
    }

    #[test]
    fn reports_every_bad_line() {
        let text = format!("{HEADER}\n0,0,1\n0,1\n0,2,99\n0,0,2\n+1,3,1\n0,4, 1\n");
        match parse_trajectories(&text, &grid(), 48) {
            Err(Error::Malformed(lines)) => {
                let nums: Vec<usize> = lines.iter().map(|l| l.line).collect();
                assert_eq!(nums, vec![3, 4, 5, 6, 7]);
                assert!(lines[1].reason.contains("unknown loc_id 99"));
                assert!(lines[2].reason.contains("duplicate slot 0"));
            }
            other => panic!("expected line errors, got {other:?}"),
        }
    }

    #[test]
    fn header_is_required() {
        assert!(matches!(parse_trajectories("0,0,1\n", &grid(), 48), Err(Error::Header { .. })));
    }

    #[test]
    fn canonical_text_is_sorted() {
        let a = Trajectory::new(UserId(3), vec![Point::new(5, 2), Point::new(6, 0)]).unwrap();
        let b = Trajectory::new(UserId(1), vec![Point::new(0, 4)]).unwrap();
        let text = format_trajectories([&a, &b]).unwrap();
        assert_eq!(text, format!("{HEADER}\n1,0,4\n3,5,2\n3,6,0\n"));
        let clash = Trajectory::new(UserId(3), vec![Point::new(5, 1)]).unwrap();
        assert!(format_trajectories([&a, &clash]).is_err());
    }
}
