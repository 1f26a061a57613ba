//! Server-side campaign tasks and their argument encodings.
//!
//! Tasks refer to entities by index. The server holds the space, so feature
//! vectors never travel and hidden values stay on the assay side.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use steer_core::campaign::{
    run_assay, AssayParams, AssayResultEntry, EntityId, RidgeModel, Space, SurrogateEnsemble,
};
use steer_core::Value;

use crate::taskserver::{MethodRegistry, ServerError, TaskDefinition, TaskInputs};
use crate::thinker::BoxError;

pub const ASSAY: &str = "assay";
pub const TRAIN: &str = "train";
pub const PREDICT: &str = "predict";
pub const SIM_POOL: &str = "sim";
pub const ML_POOL: &str = "ml";

/// Worker counts and model settings the server needs.
#[derive(Debug, Clone, Copy)]
pub struct ServerSide {
    pub sim_workers: usize,
    pub ml_workers: usize,
    pub assay: AssayParams,
    pub ensemble_size: usize,
    pub ridge_alpha: f64,
}

pub fn registry(space: Arc<Space>, side: ServerSide) -> Result<MethodRegistry, ServerError> {
    let mut reg = MethodRegistry::new();
    reg.add_pool(SIM_POOL, side.sim_workers)?;
    reg.add_pool(ML_POOL, side.ml_workers)?;

    let s = space.clone();
    let params = side.assay;
    reg.register(
        TaskDefinition::new(ASSAY, SIM_POOL, move |i: TaskInputs| {
            let id = entity_arg(i.arg(0)?)?;
            let entity = s.get(id).ok_or_else(|| format!("no entity {id}"))?;
            let seed = i.kwarg("draw_seed").and_then(Value::as_i64).unwrap_or(0) as u64;
            if params.duration_s > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(params.duration_s));
            }
            Ok(entry_to_value(&run_assay(entity, &params, seed)))
        })
        .nodes(params.nodes),
    )?;

    let s = space.clone();
    reg.register(TaskDefinition::new(TRAIN, ML_POOL, move |i: TaskInputs| {
        let ids = ids_arg(i.arg(0)?)?;
        let ys = floats_arg(i.arg(1)?)?;
        let seed = i.kwarg("seed").and_then(Value::as_i64).unwrap_or(0) as u64;
        let xs = ids
            .iter()
            .map(|&id| s.get(id).map(|e| e.features.as_slice()).ok_or_else(|| format!("no entity {id}")))
            .collect::<Result<Vec<_>, _>>()?;
        let model = SurrogateEnsemble::train(&xs, &ys, side.ensemble_size, side.ridge_alpha, seed)?;
        Ok(ensemble_to_value(&model))
    }))?;

    let s = space;
    reg.register(TaskDefinition::new(PREDICT, ML_POOL, move |i: TaskInputs| {
        let model = ensemble_from_value(i.arg(0)?)?;
        let ids = ids_arg(i.arg(1)?)?;
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let e = s.get(id).ok_or_else(|| format!("no entity {id}"))?;
            let p = model.predict(&e.features)?;
            out.push(Value::List(vec![Value::Float(p.mean), Value::Float(p.spread)]));
        }
        Ok(Value::List(out))
    }))?;
    Ok(reg)
}

fn entity_arg(v: &Value) -> Result<EntityId, BoxError> {
    v.as_i64()
        .and_then(|i| u32::try_from(i).ok())
        .map(EntityId)
        .ok_or_else(|| format!("expected an entity index, got {v:?}").into())
}

pub fn ids_value(ids: &[EntityId]) -> Value {
    Value::List(ids.iter().map(|id| Value::Int(id.0 as i64)).collect())
}

pub fn ids_arg(v: &Value) -> Result<Vec<EntityId>, BoxError> {
    v.as_list()
        .ok_or("expected a list of entity indices")?
        .iter()
        .map(entity_arg)
        .collect()
}

pub fn floats_value(xs: &[f64]) -> Value {
    Value::List(xs.iter().map(|&x| Value::Float(x)).collect())
}

pub fn floats_arg(v: &Value) -> Result<Vec<f64>, BoxError> {
    v.as_list()
        .ok_or("expected a list of numbers")?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| BoxError::from(format!("not a number: {x:?}"))))
        .collect()
}

/// `(mean, spread)` pairs from a predict result.
pub fn predictions_from_value(v: &Value) -> Result<Vec<(f64, f64)>, BoxError> {
    v.as_list()
        .ok_or("expected a list of predictions")?
        .iter()
        .map(|p| match p.as_list() {
            Some([m, s]) => Ok((
                m.as_f64().ok_or("bad mean")?,
                s.as_f64().ok_or("bad spread")?,
            )),
            _ => Err(format!("bad prediction {p:?}").into()),
        })
        .collect()
}

pub fn entry_to_value(e: &AssayResultEntry) -> Value {
    let mut m = BTreeMap::new();
    m.insert("entity".into(), Value::Int(e.entity_id.0 as i64));
    m.insert("assay".into(), Value::Str(e.assay.clone()));
    m.insert("property".into(), Value::Str(e.property.clone()));
    m.insert("value".into(), e.value.map_or(Value::Null, Value::Float));
    m.insert("cost".into(), Value::Float(e.cost));
    Value::Map(m)
}

pub fn entry_from_value(v: &Value) -> Result<AssayResultEntry, BoxError> {
    let field = |k: &str| v.get(k).ok_or_else(|| BoxError::from(format!("assay result lacks `{k}`")));
    let value = match field("value")? {
        Value::Null => None,
        x => Some(x.as_f64().ok_or("assay value is not a number")?),
    };
    Ok(AssayResultEntry {
        entity_id: entity_arg(field("entity")?)?,
        assay: field("assay")?.as_str().ok_or("bad assay name")?.into(),
        property: field("property")?.as_str().ok_or("bad property name")?.into(),
        value,
        cost: field("cost")?.as_f64().ok_or("bad cost")?,
    })
}

pub fn ensemble_to_value(m: &SurrogateEnsemble) -> Value {
    let members = m
        .members
        .iter()
        .map(|r| {
            let mut e = BTreeMap::new();
            e.insert("weights".into(), floats_value(&r.weights));
            e.insert("intercept".into(), Value::Float(r.intercept));
            e.insert("bootstrap_seed".into(), Value::Int(r.bootstrap_seed as i64));
            Value::Map(e)
        })
        .collect();
    let mut out = BTreeMap::new();
    out.insert("members".into(), Value::List(members));
    out.insert("ridge_alpha".into(), Value::Float(m.ridge_alpha));
    out.insert("trained_on_count".into(), Value::Int(m.trained_on_count as i64));
    Value::Map(out)
}

pub fn ensemble_from_value(v: &Value) -> Result<SurrogateEnsemble, BoxError> {
    let members = v
        .get("members")
        .and_then(Value::as_list)
        .ok_or("model lacks members")?
        .iter()
        .map(|m| {
            Ok(RidgeModel {
                weights: floats_arg(m.get("weights").ok_or("member lacks weights")?)?,
                intercept: m.get("intercept").and_then(Value::as_f64).ok_or("member lacks intercept")?,
                bootstrap_seed: m.get("bootstrap_seed").and_then(Value::as_i64).unwrap_or(0) as u64,
            })
        })
        .collect::<Result<Vec<_>, BoxError>>()?;
    if members.len() < 2 {
        return Err("model needs at least two members".into());
    }
    Ok(SurrogateEnsemble {
        members,
        ridge_alpha: v.get("ridge_alpha").and_then(Value::as_f64).ok_or("model lacks ridge_alpha")?,
        trained_on_count: v.get("trained_on_count").and_then(Value::as_i64).unwrap_or(0) as usize,
    })
}
