//! Flat parameter access shared by the optimizer, EMA updates,
//! checkpointing and gradient checking. Every model walks its parameter
//! blocks in a fixed order, so the flattened vector layout is stable.

use crate::error::{Error, Result};

/// One named parameter block in a model's fixed walk order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

pub trait Parameterized {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));
}

pub fn param_manifest(model: &(impl Parameterized + ?Sized)) -> Vec<ParamEntry> {
    let mut entries = Vec::new();
    let mut offset = 0;
    model.for_each_param(&mut |name, shape, data| {
        entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
        });
        offset += data.len();
    });
    entries
}

pub fn n_params(model: &(impl Parameterized + ?Sized)) -> usize {
    let mut n = 0;
    model.for_each_param(&mut |_, _, data| n += data.len());
    n
}

pub fn param_vec(model: &(impl Parameterized + ?Sized)) -> Vec<f64> {
    let mut out = Vec::new();
    model.for_each_param(&mut |_, _, data| out.extend_from_slice(data));
    out
}

pub fn load_param_vec(model: &mut impl Parameterized, flat: &[f64]) -> Result<()> {
    let mut offset = 0;
    let mut overflow = false;
    model.for_each_param_mut(&mut |_, _, data| {
        if offset + data.len() > flat.len() {
            overflow = true;
            return;
        }
        data.copy_from_slice(&flat[offset..offset + data.len()]);
        offset += data.len();
    });
    if overflow || offset != flat.len() {
        return Err(Error::shape(format!(
            "parameter vector length {} does not match model ({} consumed)",
            flat.len(),
            offset
        )));
    }
    Ok(())
}

/// teacher <- m * teacher + (1 - m) * student, blockwise. The two models
/// must expose identical manifests.
pub fn ema_blend(
    teacher: &mut impl Parameterized,
    student: &impl Parameterized,
    m: f64,
) -> Result<()> {
    if param_manifest(teacher) != param_manifest(student) {
        return Err(Error::shape(
            "teacher and student architectures differ".to_string(),
        ));
    }
    let flat = param_vec(student);
    let mut offset = 0;
    teacher.for_each_param_mut(&mut |_, _, data| {
        let n = data.len();
        for (t, &s) in data.iter_mut().zip(&flat[offset..offset + n]) {
            *t = m * *t + (1.0 - m) * s;
        }
        offset += n;
    });
    Ok(())
}

/// Element-wise sum of the gradients in `other` into `acc`.
pub fn accumulate(acc: &mut impl Parameterized, other: &impl Parameterized) {
    let flat = param_vec(other);
    let mut offset = 0;
    acc.for_each_param_mut(&mut |_, _, data| {
        let n = data.len();
        for (a, &o) in data.iter_mut().zip(&flat[offset..offset + n]) {
            *a += o;
        }
        offset += n;
    });
}

/// Multiply every parameter by a scalar (used to average batch gradients).
pub fn scale_params(model: &mut impl Parameterized, factor: f64) {
    model.for_each_param_mut(&mut |_, _, data| {
        for v in data.iter_mut() {
            *v *= factor;
        }
    });
}
