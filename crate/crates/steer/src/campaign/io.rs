//! Space files and campaign reports.

use std::fmt::Write as _;
use std::io::{Read, Write};

use steer_core::campaign::{Entity, EntityId, Space};

use super::CampaignReport;

#[derive(Debug, thiserror::Error)]
pub enum SpaceFileError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("header must be id, f0..f{{dim-1}}, hidden_value")]
    Header,
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("space file holds no entities")]
    Empty,
}

/// Header `id,f0,..,hidden_value`; ids are written as `e<index>`.
pub fn write_space_csv(space: &Space, w: impl Write) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string()];
    header.extend((0..space.dim()).map(|j| format!("f{j}")));
    header.push("hidden_value".into());
    out.write_record(&header)?;
    for e in &space.entities {
        let mut row = vec![e.id.to_string()];
        row.extend(e.features.iter().map(|x| x.to_string()));
        row.push(e.hidden_value().to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a space written by [`write_space_csv`]. Rows must be in id order
/// starting from 0, since ids double as indices.
pub fn read_space_csv(r: impl Read) -> Result<Space, SpaceFileError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let n = header.len();
    let dim = n.checked_sub(2).filter(|&d| d >= 1).ok_or(SpaceFileError::Header)?;
    let expected = (0..dim).map(|j| format!("f{j}"));
    if header.get(0) != Some("id")
        || header.get(n - 1) != Some("hidden_value")
        || !header.iter().skip(1).take(dim).eq(expected)
    {
        return Err(SpaceFileError::Header);
    }
    let mut entities = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| SpaceFileError::Row { row, message };
        let id: EntityId = rec[0].parse().map_err(|_| bad(format!("bad id `{}`", &rec[0])))?;
        if id.index() != row {
            return Err(bad(format!("id {id} out of order")));
        }
        let nums = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|_| bad(format!("not a number: `{f}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let (hidden, features) = nums.split_last().expect("dim >= 1");
        entities.push(Entity::new(id, features.to_vec(), *hidden));
    }
    if entities.is_empty() {
        return Err(SpaceFileError::Empty);
    }
    Ok(Space::from_entities(entities))
}

/// Time series: `wall_ms,assays_done,V,count_above,cost`. `V` is empty
/// until the first success.
pub fn write_series_csv(report: &CampaignReport, w: impl Write) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["wall_ms", "assays_done", "V", "count_above", "cost"])?;
    for p in &report.series {
        out.write_record([
            format!("{:.3}", p.wall_ms),
            p.assays_done.to_string(),
            p.best.map_or(String::new(), |v| v.to_string()),
            p.count_above.to_string(),
            p.cost.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Selections in submission order with their outcomes. Holds no timing
/// columns, so reproducible runs give identical files.
pub fn write_selections_csv(report: &CampaignReport, w: impl Write) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["order", "entity", "source", "success", "value", "above_threshold"])?;
    for (i, s) in report.selections.iter().enumerate() {
        let entry = report.record.for_entity(s.entity).next();
        let value = entry.and_then(|e| e.value);
        out.write_record([
            i.to_string(),
            s.entity.to_string(),
            s.source.name().to_string(),
            entry.map_or("", |e| if e.success() { "true" } else { "false" }).to_string(),
            value.map_or(String::new(), |v| v.to_string()),
            value.is_some_and(|v| v > report.threshold).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Human-readable `key: value` block.
pub fn summary(report: &CampaignReport) -> String {
    let mut s = String::new();
    let c = &report.config;
    let _ = writeln!(s, "policy: {}", report.policy);
    let _ = writeln!(s, "seed: {}", c.seed);
    let _ = writeln!(s, "budget: {}", c.budget);
    let _ = writeln!(s, "n_retrain: {}", c.n_retrain);
    let _ = writeln!(s, "ucb_kappa: {}", c.ucb_kappa);
    let _ = writeln!(s, "synchronous: {}", c.synchronous);
    let _ = writeln!(s, "success_threshold: {}", report.threshold);
    let _ = writeln!(s, "assays_submitted: {}", report.assays_submitted);
    let _ = writeln!(s, "assays_succeeded: {}", report.record.success_count());
    let _ = writeln!(s, "discoveries: {}", report.score.count_above);
    match report.score.best {
        Some(v) => {
            let _ = writeln!(s, "best_value: {v}");
        }
        None => {
            let _ = writeln!(s, "best_value: none");
        }
    }
    let _ = writeln!(s, "total_cost_node_s: {}", report.score.cost);
    let _ = writeln!(s, "trainings: {}", report.trainings);
    let _ = writeln!(s, "training_failures: {}", report.training_failures);
    let _ = writeln!(s, "predict_tasks: {}", report.predict_tasks);
    let _ = writeln!(s, "queue_reorders: {}", report.reorders.len());
    let _ = writeln!(s, "random_fallbacks: {}", report.fallbacks.len());
    for (pool, u) in &report.utilization {
        let _ = writeln!(s, "utilization_{pool}: {u:.4}");
    }
    let _ = writeln!(s, "wall_time_s: {:.3}", report.wall_time.as_secs_f64());
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use steer_core::campaign::SpaceKind;

    #[test]
    fn space_round_trip() {
        let space = Space::generate(50, 3, 4, SpaceKind::Rippled);
        let mut buf = Vec::new();
        write_space_csv(&space, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,f0,f1,f2,hidden_value\ne0,"));
        let back = read_space_csv(buf.as_slice()).unwrap();
        assert_eq!(back.entities, space.entities);
    }

    #[test]
    fn bad_space_files() {
        assert!(matches!(read_space_csv("id,x,hidden_value\n".as_bytes()), Err(SpaceFileError::Header)));
        assert!(matches!(read_space_csv("id,f0,hidden_value\n".as_bytes()), Err(SpaceFileError::Empty)));
        assert!(matches!(
            read_space_csv("id,f0,hidden_value\ne1,0.5,1\n".as_bytes()),
            Err(SpaceFileError::Row { row: 0, .. })
        ));
        assert!(matches!(
            read_space_csv("id,f0,hidden_value\ne0,abc,1\n".as_bytes()),
            Err(SpaceFileError::Row { .. })
        ));
    }
}
