//! Analytic gradients of the full model against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::Result;
use crate::model::Network;
use crate::objective::deep_supervision_loss;
use crate::params::{BufferStore, Ctx, ParamId, ParamStore};
use crate::tensor::{BatchNormMode, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub batch: usize,
    pub size: usize,
    /// Entries probed per parameter tensor.
    pub samples_per_tensor: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Test fixture: scale the analytic gradient of parameters whose name
    /// starts with this prefix by 1.5.
    #[serde(default)]
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 2,
            size: 64,
            samples_per_tensor: 3,
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-6,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub group: String,
    pub checked: usize,
    pub worst_rel_error: f64,
    pub worst_entry: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupResult>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn table(&self) -> String {
        let mut out = String::from("group\tchecked\tworst_rel_error\tentry\tstatus\n");
        for g in &self.groups {
            out.push_str(&format!(
                "{}\t{}\t{:.3e}\t{}\t{}\n",
                g.group,
                g.checked,
                g.worst_rel_error,
                g.worst_entry,
                if g.passed { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Parameter group: encoder, neck, decoder (residual blocks) or heads.
pub fn parameter_group(name: &str) -> &'static str {
    if name.starts_with("encoder.") {
        "encoder"
    } else if name.starts_with("neck.") {
        "neck"
    } else if name.contains(".head.") {
        "heads"
    } else {
        "decoder"
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct Problem {
    img_a: Tensor<f64>,
    img_b: Tensor<f64>,
    labels: Tensor<f64>,
}

fn loss(net: &Network<f64>, params: &ParamStore<f64>, p: &Problem) -> Result<f64> {
    let mut buffers: BufferStore<f64> = net.buffers.clone();
    let mut ctx = Ctx::new(params, &mut buffers, BatchNormMode::Train);
    let a = ctx.tape.constant(p.img_a.clone());
    let b = ctx.tape.constant(p.img_b.clone());
    let outs = net.model.forward(&mut ctx, a, b)?;
    let (_, breakdown) = deep_supervision_loss(&mut ctx.tape, &outs, &p.labels)?;
    Ok(breakdown.total)
}

fn analytic(net: &Network<f64>, p: &Problem) -> Result<Vec<Option<Tensor<f64>>>> {
    let mut buffers = net.buffers.clone();
    let mut ctx = Ctx::new(&net.params, &mut buffers, BatchNormMode::Train);
    let a = ctx.tape.constant(p.img_a.clone());
    let b = ctx.tape.constant(p.img_b.clone());
    let outs = net.model.forward(&mut ctx, a, b)?;
    let (l, _) = deep_supervision_loss(&mut ctx.tape, &outs, &p.labels)?;
    let grads = ctx.backward(l)?;
    let mut out: Vec<Option<Tensor<f64>>> = vec![None; net.params.len()];
    for (id, g) in grads.0 {
        out[id.index()] = Some(g);
    }
    Ok(out)
}

/// Checks sampled entries of every parameter tensor of `config` (run in
/// double precision, training-mode normalization) at a random input.
pub fn gradcheck(config: &ModelConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let net = Network::<f64>::new(config, opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let shape = [opts.batch, 3, opts.size, opts.size];
    let numel = shape.iter().product::<usize>();
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let img_a = Tensor::from_vec(shape.to_vec(), normal(numel))?;
    let img_b = Tensor::from_vec(shape.to_vec(), normal(numel))?;
    let label_data = (0..opts.batch * opts.size * opts.size)
        .map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 })
        .collect();
    let labels = Tensor::from_vec(vec![opts.batch, 1, opts.size, opts.size], label_data)?;
    let problem = Problem { img_a, img_b, labels };

    let grads = analytic(&net, &problem)?;
    let mut params = net.params.clone();
    let mut groups: Vec<GroupResult> = ["encoder", "neck", "decoder", "heads"]
        .iter()
        .map(|g| GroupResult {
            group: g.to_string(),
            checked: 0,
            worst_rel_error: 0.0,
            worst_entry: String::new(),
            passed: true,
        })
        .collect();

    let ids: Vec<ParamId> = net.params.ids().collect();
    for id in ids {
        let name = net.params.name(id).to_string();
        let n = net.params.value(id).numel();
        let scale = match &opts.corrupt {
            Some(prefix) if name.starts_with(prefix.as_str()) => 1.5,
            _ => 1.0,
        };
        let entries: Vec<usize> = if n <= opts.samples_per_tensor {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, opts.samples_per_tensor).into_vec()
        };
        for i in entries {
            let a = grads[id.index()].as_ref().map_or(0.0, |g| g.data()[i]) * scale;
            let orig = params.value(id).data()[i];
            params.value_mut(id).data_mut()[i] = orig + opts.step;
            let up = loss(&net, &params, &problem)?;
            params.value_mut(id).data_mut()[i] = orig - opts.step;
            let down = loss(&net, &params, &problem)?;
            params.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let err = relative_error(a, numeric, opts.floor);

            let g = groups
                .iter_mut()
                .find(|g| g.group == parameter_group(&name))
                .expect("every name maps to a group");
            g.checked += 1;
            if err > g.worst_rel_error || g.worst_entry.is_empty() {
                g.worst_rel_error = err;
                g.worst_entry = format!("{name}[{i}]");
            }
        }
    }
    for g in &mut groups {
        g.passed = g.worst_rel_error <= opts.tolerance;
    }
    let passed = groups.iter().all(|g| g.passed);
    Ok(GradcheckReport { groups, passed })
}
